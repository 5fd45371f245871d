//! Stage 6: object-mean view, VQ error image, per-band RMSE and the
//! compression report.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{QnqError, Result};
use crate::raster::{RasterImage, BANDS};
use crate::sdt::SegmentTable;
use crate::segmentation::LabelMap;

fn check_table(labels: &LabelMap, table: &SegmentTable) -> Result<()> {
    if table.records.len() != labels.segment_count() as usize
        || table.records.iter().enumerate().any(|(i, r)| r.id as usize != i)
    {
        return Err(QnqError::integrity(format!(
            "segment table has {} records for {} segments",
            table.records.len(),
            labels.segment_count()
        )));
    }
    Ok(())
}

/// Every pixel replaced by its segment's mean, rounded half up.
pub fn object_mean_view(labels: &LabelMap, table: &SegmentTable) -> Result<RasterImage> {
    check_table(labels, table)?;
    let means: Vec<[u8; BANDS]> = table.records.iter().map(|r| r.rounded_mean()).collect();
    let mut samples = vec![0u8; labels.labels().len() * BANDS];
    samples
        .par_chunks_mut(BANDS)
        .zip(labels.labels().par_iter())
        .for_each(|(px, &id)| px.copy_from_slice(&means[id as usize]));
    RasterImage::new(labels.width(), labels.height(), samples)
}

/// Per-band squared error of the segmentwise-constant image whose segment
/// `id` takes the value `values[id]`.
pub fn segmentwise_sse(original: &RasterImage, labels: &LabelMap, values: &[[f64; BANDS]]) -> Result<[f64; BANDS]> {
    QnqError::check_dims(original.dims(), labels.dims())?;
    if values.len() < labels.segment_count() as usize {
        return Err(QnqError::integrity("fewer segment values than segments"));
    }
    let mut sse = [0.0; BANDS];
    for (px, &id) in original.samples().chunks_exact(BANDS).zip(labels.labels()) {
        let v = &values[id as usize];
        for b in 0..BANDS {
            let d = f64::from(px[b]) - v[b];
            sse[b] += d * d;
        }
    }
    Ok(sse)
}

/// Per-band squared error of the real-valued (unrounded) object-mean view.
pub fn object_mean_sse(original: &RasterImage, labels: &LabelMap, table: &SegmentTable) -> Result<[f64; BANDS]> {
    check_table(labels, table)?;
    let means: Vec<[f64; BANDS]> = table.records.iter().map(|r| r.mean).collect();
    segmentwise_sse(original, labels, &means)
}

fn sum_squared_diff(a: &RasterImage, b: &RasterImage, band: usize) -> Result<u64> {
    QnqError::check_dims(a.dims(), b.dims())?;
    if band >= BANDS {
        return Err(QnqError::invalid(format!("band {band} out of range")));
    }
    Ok(a.samples()
        .par_chunks(BANDS)
        .zip(b.samples().par_chunks(BANDS))
        .map(|(p, q)| {
            let d = i64::from(p[band]) - i64::from(q[band]);
            (d * d) as u64
        })
        .sum())
}

/// `sqrt(sum_i (P_b(i) - P*_b(i))^2 / N)`, exact integer accumulation.
pub fn rmse(original: &RasterImage, approx: &RasterImage, band: usize) -> Result<f64> {
    let sse = sum_squared_diff(original, approx, band)?;
    Ok((sse as f64 / original.pixel_count() as f64).sqrt())
}

pub fn rmse_bands(original: &RasterImage, approx: &RasterImage) -> Result<[f64; BANDS]> {
    let mut out = [0.0; BANDS];
    for (b, o) in out.iter_mut().enumerate() {
        *o = rmse(original, approx, b)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Per-band absolute differences plus the per-pixel Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorImage {
    pub width: usize,
    pub height: usize,
    pub abs_diff: Vec<u8>,
    pub norm: Vec<f64>,
}

/// Largest possible norm, `255 * sqrt(3)`.
pub const MAX_ERROR_NORM: f64 = 441.672_955_930_063_7;

impl ErrorImage {
    pub fn is_zero(&self) -> bool {
        self.abs_diff.iter().all(|&d| d == 0)
    }

    pub fn summary(&self) -> ErrorSummary {
        let min = self.norm.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.norm.iter().copied().fold(0.0, f64::max);
        let mean = self.norm.iter().sum::<f64>() / self.norm.len() as f64;
        ErrorSummary { min, mean, max }
    }

    /// Norm scaled linearly from `0..=255*sqrt(3)` to gray levels.
    pub fn norm_gray(&self) -> Vec<u8> {
        self.norm
            .iter()
            .map(|&n| (n * 255.0 / MAX_ERROR_NORM).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn abs_diff_image(&self) -> Result<RasterImage> {
        RasterImage::new(self.width, self.height, self.abs_diff.clone())
    }
}

pub fn error_image(original: &RasterImage, approx: &RasterImage) -> Result<ErrorImage> {
    QnqError::check_dims(original.dims(), approx.dims())?;
    let abs_diff: Vec<u8> = original
        .samples()
        .iter()
        .zip(approx.samples())
        .map(|(&a, &b)| a.abs_diff(b))
        .collect();
    let norm = abs_diff
        .chunks_exact(BANDS)
        .map(|d| {
            let s: u32 = d.iter().map(|&x| u32::from(x) * u32::from(x)).sum();
            f64::from(s).sqrt()
        })
        .collect();
    Ok(ErrorImage {
        width: original.width(),
        height: original.height(),
        abs_diff,
        norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompressionReport {
    pub levels: usize,
    pub bits_per_pixel: u32,
    pub ratio_vs_24bit: f64,
    /// False for level counts other than the 50/12 color-map levels.
    pub color_map_level: bool,
}

/// `ceil(log2(levels))` bits per pixel against 24-bit RGB.
pub fn compression_report(levels: usize) -> Result<CompressionReport> {
    if levels < 2 {
        return Err(QnqError::invalid(format!("need at least 2 levels, got {levels}")));
    }
    let bits = usize::BITS - (levels - 1).leading_zeros();
    Ok(CompressionReport {
        levels,
        bits_per_pixel: bits,
        ratio_vs_24bit: 24.0 / f64::from(bits),
        color_map_level: levels == 50 || levels == 12,
    })
}
