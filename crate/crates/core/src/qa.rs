//! Quality assessment: z-score standardization of indicator tables,
//! ultimate scores, three-fold cross-validation against k-means, and CSV
//! output of both tables.

use std::fmt::Write as _;

use serde::Serialize;

use crate::constancy::{color_constancy, ConstancyConfig};
use crate::error::{QnqError, Result};
use crate::naming::{quantize_image, ColorDictionary, ColorMap};
use crate::raster::{RasterImage, BANDS};
use crate::reconstruction::{object_mean_view, rmse_bands};
use crate::sdt::build_sdt;
use crate::segmentation::{label_components, Connectivity};
use crate::vq::{apply_codebook, kmeans_run, InitMode, KMeansConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Orientation {
    Minimize,
    Maximize,
}

impl Orientation {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Minimize => "MINIMIZE",
            Self::Maximize => "MAXIMIZE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZScores {
    pub values: Vec<f64>,
    /// Set when every input was equal; `values` are then all zero.
    pub degenerate: bool,
}

/// `(v - mean) / s` with the sample standard deviation (divisor `n - 1`).
pub fn zscore_row(values: &[f64]) -> Result<ZScores> {
    let n = values.len();
    if n < 2 {
        return Err(QnqError::invalid("z-scores need at least two values"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 || values.iter().all(|&v| v == values[0]) {
        return Ok(ZScores {
            values: vec![0.0; n],
            degenerate: true,
        });
    }
    Ok(ZScores {
        values: values.iter().map(|v| (v - mean) / sd).collect(),
        degenerate: false,
    })
}

/// Column sums of raw z-scores.
pub fn ultimate_score(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || width == 0 {
        return Err(QnqError::invalid("empty z-score table"));
    }
    if rows.iter().any(|r| r.len() != width) {
        return Err(QnqError::invalid("ragged z-score table"));
    }
    Ok((0..width).map(|c| rows.iter().map(|r| r[c]).sum()).collect())
}

/// Column sums after negating rows to be minimized, so higher is better.
pub fn oriented_score(rows: &[(Orientation, Vec<f64>)]) -> Result<Vec<f64>> {
    let flipped: Vec<Vec<f64>> = rows
        .iter()
        .map(|(o, r)| match o {
            Orientation::Maximize => r.clone(),
            Orientation::Minimize => r.iter().map(|v| -v).collect(),
        })
        .collect();
    ultimate_score(&flipped)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndicatorRow {
    pub image: String,
    pub indicator: String,
    pub orientation: Orientation,
    pub values: Vec<f64>,
}

/// Rows per (image, indicator), one value per algorithm column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndicatorTable {
    pub algorithms: Vec<String>,
    pub rows: Vec<IndicatorRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZRow {
    pub image: String,
    pub indicator: String,
    pub orientation: Orientation,
    pub z: ZScores,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndicatorTotal {
    pub indicator: String,
    pub orientation: Orientation,
    pub total: Vec<f64>,
    pub oriented_total: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZTable {
    pub algorithms: Vec<String>,
    pub rows: Vec<ZRow>,
    /// Per indicator, summed over images.
    pub totals: Vec<IndicatorTotal>,
}

fn csv_header(out: &mut String, algorithms: &[String]) {
    out.push_str("image,indicator,orientation");
    for a in algorithms {
        out.push(',');
        out.push_str(a);
    }
    out.push('\n');
}

fn csv_row(out: &mut String, image: &str, indicator: &str, orientation: Orientation, values: &[f64]) {
    let _ = write!(out, "{image},{indicator},{}", orientation.as_str());
    for v in values {
        let _ = write!(out, ",{v:.6}");
    }
    out.push('\n');
}

impl IndicatorTable {
    pub fn standardize(&self) -> Result<ZTable> {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                if r.values.len() != self.algorithms.len() {
                    return Err(QnqError::invalid(format!(
                        "row {}/{} has {} values for {} algorithms",
                        r.image,
                        r.indicator,
                        r.values.len(),
                        self.algorithms.len()
                    )));
                }
                Ok(ZRow {
                    image: r.image.clone(),
                    indicator: r.indicator.clone(),
                    orientation: r.orientation,
                    z: zscore_row(&r.values)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut indicators: Vec<(String, Orientation)> = Vec::new();
        for r in &rows {
            if !indicators.iter().any(|(n, _)| *n == r.indicator) {
                indicators.push((r.indicator.clone(), r.orientation));
            }
        }
        let totals = indicators
            .into_iter()
            .map(|(name, orientation)| {
                let group: Vec<Vec<f64>> = rows
                    .iter()
                    .filter(|r| r.indicator == name)
                    .map(|r| r.z.values.clone())
                    .collect();
                let oriented: Vec<(Orientation, Vec<f64>)> =
                    group.iter().map(|g| (orientation, g.clone())).collect();
                Ok(IndicatorTotal {
                    total: ultimate_score(&group)?,
                    oriented_total: oriented_score(&oriented)?,
                    indicator: name,
                    orientation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ZTable {
            algorithms: self.algorithms.clone(),
            rows,
            totals,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        csv_header(&mut out, &self.algorithms);
        for r in &self.rows {
            csv_row(&mut out, &r.image, &r.indicator, r.orientation, &r.values);
        }
        out
    }
}

impl ZTable {
    /// Standardized rows followed by per-indicator `total` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        csv_header(&mut out, &self.algorithms);
        for r in &self.rows {
            csv_row(&mut out, &r.image, &r.indicator, r.orientation, &r.z.values);
        }
        for t in &self.totals {
            csv_row(&mut out, "total", &t.indicator, t.orientation, &t.total);
        }
        out
    }

    pub fn total(&self, indicator: &str) -> Option<&[f64]> {
        self.totals
            .iter()
            .find(|t| t.indicator == indicator)
            .map(|t| t.total.as_slice())
    }
}

pub const INDICATORS: [(&str, Orientation); 5] = [
    ("rmse_r", Orientation::Minimize),
    ("rmse_g", Orientation::Minimize),
    ("rmse_b", Orientation::Minimize),
    ("segments", Orientation::Minimize),
    ("mean_area", Orientation::Maximize),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossValidationConfig {
    pub constancy: ConstancyConfig,
    pub connectivity: Connectivity,
    /// `init` is ignored; fold `j` uses seed `seed + j`, hybrid uses deductive.
    pub kmeans: KMeansConfig,
    pub seed: u64,
}

impl Default for CrossValidationConfig {
    fn default() -> Self {
        Self {
            constancy: ConstancyConfig::default(),
            connectivity: Connectivity::default(),
            kmeans: KMeansConfig::default(),
            seed: 0,
        }
    }
}

/// Outcome indicators of one quantized image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Indicators {
    pub rmse: [f64; BANDS],
    pub segments: u32,
    pub mean_area: f64,
}

/// RMSE of the object-mean view against `reference`, segment count and
/// mean area `N / segments`.
pub fn measure(reference: &RasterImage, map: &ColorMap, connectivity: Connectivity) -> Result<(Indicators, RasterImage)> {
    let labels = label_components(map, connectivity)?;
    let table = build_sdt(&labels, map, reference)?;
    let view = object_mean_view(&labels, &table)?;
    let segments = labels.segment_count();
    Ok((
        Indicators {
            rmse: rmse_bands(reference, &view)?,
            segments,
            mean_area: reference.pixel_count() as f64 / f64::from(segments),
        },
        view,
    ))
}

/// One reconstruction per (image, algorithm) cell, in table column order.
#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub table: IndicatorTable,
    pub normalized: Vec<RasterImage>,
    pub reconstructions: Vec<Vec<RasterImage>>,
}

/// Columns: the deductive quantizer, k-means trained on each image in turn
/// (training error on its own image, prediction error on the others), and
/// k-means initialized by the deductive quantizer on each image.
pub fn cross_validate(
    images: &[RasterImage],
    config: &CrossValidationConfig,
    dict: &ColorDictionary,
) -> Result<CrossValidation> {
    if images.len() < 2 {
        return Err(QnqError::invalid("cross-validation needs at least two images"));
    }
    let normalized: Vec<RasterImage> = images
        .iter()
        .map(|img| color_constancy(img, &config.constancy).map(|o| o.image))
        .collect::<Result<_>>()?;

    let mut trained = Vec::with_capacity(images.len());
    for (j, img) in normalized.iter().enumerate() {
        let mut kc = config.kmeans;
        kc.k = kc.k.min(img.pixel_count());
        kc.init = InitMode::Random {
            seed: config.seed.wrapping_add(j as u64),
        };
        trained.push(kmeans_run(img, &kc, dict)?);
    }

    let mut algorithms = vec!["rgbiam".to_string()];
    algorithms.extend((1..=images.len()).map(|j| format!("kmeans_train_{j}")));
    algorithms.push("hybrid".into());

    let mut rows = Vec::new();
    let mut reconstructions = Vec::new();
    for (i, img) in normalized.iter().enumerate() {
        let mut maps = vec![quantize_image(img, dict)];
        for (j, t) in trained.iter().enumerate() {
            maps.push(if i == j {
                t.assignment.clone()
            } else {
                apply_codebook(img, &t.codebook)
            });
        }
        let mut hc = config.kmeans;
        hc.init = InitMode::Deductive;
        maps.push(kmeans_run(img, &hc, dict)?.assignment);

        let mut cells = Vec::with_capacity(maps.len());
        let mut views = Vec::with_capacity(maps.len());
        for m in &maps {
            let (ind, view) = measure(img, m, config.connectivity)?;
            cells.push(ind);
            views.push(view);
        }
        let image = format!("image_{}", i + 1);
        for (k, (name, orientation)) in INDICATORS.iter().enumerate() {
            let values = cells
                .iter()
                .map(|c| match k {
                    0..=2 => c.rmse[k],
                    3 => f64::from(c.segments),
                    _ => c.mean_area,
                })
                .collect();
            rows.push(IndicatorRow {
                image: image.clone(),
                indicator: (*name).to_string(),
                orientation: *orientation,
                values,
            });
        }
        reconstructions.push(views);
    }
    Ok(CrossValidation {
        table: IndicatorTable { algorithms, rows },
        normalized,
        reconstructions,
    })
}
