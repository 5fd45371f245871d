//! Stage 5: segment description table (SDT).
//!
//! One streamed pass accumulates area, per-band integer sums, minimum
//! enclosing rectangle and color code per segment id. Accumulators merge
//! commutatively, so stripes may be visited in any order.

use std::fmt::Write as _;
use std::ops::Range;

use serde::Serialize;

use crate::error::{QnqError, Result};
use crate::naming::ColorMap;
use crate::raster::{RasterImage, TileScheme, BANDS};
use crate::segmentation::LabelMap;

/// Idealized bytes per record: id 4 + MER 16 + label 1 + area 4 + mean 12.
pub const RECORD_BYTES: u64 = 37;

pub const CSV_HEADER: &str = "id,min_row,min_col,max_row,max_col,color_code,area,mean_r,mean_g,mean_b";

/// Minimum enclosing rectangle, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Mer {
    pub min_row: u32,
    pub min_col: u32,
    pub max_row: u32,
    pub max_col: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentRecord {
    pub id: u32,
    pub mer: Mer,
    pub color_code: u8,
    pub area: u64,
    pub sums: [u64; BANDS],
    pub mean: [f64; BANDS],
}

impl SegmentRecord {
    /// Per-band mean rounded half up to 8 bits, from the exact integer sums.
    pub fn rounded_mean(&self) -> [u8; BANDS] {
        let mut out = [0u8; BANDS];
        for (o, &s) in out.iter_mut().zip(&self.sums) {
            *o = ((2 * s + self.area) / (2 * self.area)) as u8;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentTable {
    /// Levels of the color map the segments were derived from.
    pub level: usize,
    pub records: Vec<SegmentRecord>,
}

impl SegmentTable {
    pub fn total_area(&self) -> u64 {
        self.records.iter().map(|r| r.area).sum()
    }

    /// Bytes this implementation holds for the records.
    pub fn actual_bytes(&self) -> u64 {
        (self.records.len() * std::mem::size_of::<SegmentRecord>()) as u64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.6},{:.6},{:.6}",
                r.id,
                r.mer.min_row,
                r.mer.min_col,
                r.mer.max_row,
                r.mer.max_col,
                r.color_code,
                r.area,
                r.mean[0],
                r.mean[1],
                r.mean[2]
            );
        }
        out
    }
}

/// Estimated footprint of `n_segments` records.
pub fn memory_estimate(n_segments: u64) -> u64 {
    n_segments * RECORD_BYTES
}

const NO_COLOR: u16 = u16::MAX;

#[derive(Debug, Clone, Copy)]
struct Acc {
    area: u64,
    sums: [u64; BANDS],
    min_row: u32,
    min_col: u32,
    max_row: u32,
    max_col: u32,
    color: u16,
}

impl Default for Acc {
    fn default() -> Self {
        Self {
            area: 0,
            sums: [0; BANDS],
            min_row: u32::MAX,
            min_col: u32::MAX,
            max_row: 0,
            max_col: 0,
            color: NO_COLOR,
        }
    }
}

/// Partial SDT over any subset of rows.
#[derive(Debug, Clone)]
pub struct SdtAccumulator {
    accs: Vec<Acc>,
}

impl SdtAccumulator {
    pub fn new(segment_count: u32) -> Self {
        Self {
            accs: vec![Acc::default(); segment_count as usize],
        }
    }

    pub fn accumulate_rows(
        &mut self,
        labels: &LabelMap,
        colors: &ColorMap,
        image: &RasterImage,
        rows: Range<usize>,
    ) -> Result<()> {
        let w = labels.width();
        let ids = labels.labels();
        let codes = colors.codes();
        let px = image.samples();
        for y in rows {
            for x in 0..w {
                let i = y * w + x;
                let acc = self
                    .accs
                    .get_mut(ids[i] as usize)
                    .ok_or_else(|| QnqError::integrity(format!("segment id {} out of range", ids[i])))?;
                let code = u16::from(codes[i]);
                if acc.color == NO_COLOR {
                    acc.color = code;
                } else if acc.color != code {
                    return Err(QnqError::integrity(format!(
                        "segment {} carries color codes {} and {}",
                        ids[i], acc.color, code
                    )));
                }
                acc.area += 1;
                for b in 0..BANDS {
                    acc.sums[b] += u64::from(px[i * BANDS + b]);
                }
                let (r, c) = (y as u32, x as u32);
                acc.min_row = acc.min_row.min(r);
                acc.max_row = acc.max_row.max(r);
                acc.min_col = acc.min_col.min(c);
                acc.max_col = acc.max_col.max(c);
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &SdtAccumulator) -> Result<()> {
        if self.accs.len() != other.accs.len() {
            return Err(QnqError::integrity("merging accumulators of different segment counts"));
        }
        for (id, (a, b)) in self.accs.iter_mut().zip(&other.accs).enumerate() {
            if b.area == 0 {
                continue;
            }
            if a.color != NO_COLOR && a.color != b.color {
                return Err(QnqError::integrity(format!(
                    "segment {id} carries color codes {} and {}",
                    a.color, b.color
                )));
            }
            a.color = b.color;
            a.area += b.area;
            for k in 0..BANDS {
                a.sums[k] += b.sums[k];
            }
            a.min_row = a.min_row.min(b.min_row);
            a.max_row = a.max_row.max(b.max_row);
            a.min_col = a.min_col.min(b.min_col);
            a.max_col = a.max_col.max(b.max_col);
        }
        Ok(())
    }

    pub fn finish(self, level: usize) -> Result<SegmentTable> {
        let records = self
            .accs
            .into_iter()
            .enumerate()
            .map(|(id, a)| {
                if a.area == 0 {
                    return Err(QnqError::integrity(format!("segment {id} has no pixels")));
                }
                let mut mean = [0.0; BANDS];
                for (m, &s) in mean.iter_mut().zip(&a.sums) {
                    *m = s as f64 / a.area as f64;
                }
                Ok(SegmentRecord {
                    id: id as u32,
                    mer: Mer {
                        min_row: a.min_row,
                        min_col: a.min_col,
                        max_row: a.max_row,
                        max_col: a.max_col,
                    },
                    color_code: a.color as u8,
                    area: a.area,
                    sums: a.sums,
                    mean,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SegmentTable { level, records })
    }
}

pub fn build_sdt(labels: &LabelMap, colors: &ColorMap, image: &RasterImage) -> Result<SegmentTable> {
    build_sdt_streamed(labels, colors, image, &TileScheme::whole(labels.height()))
}

/// Visits the image stripe by stripe into one accumulator.
pub fn build_sdt_streamed(
    labels: &LabelMap,
    colors: &ColorMap,
    image: &RasterImage,
    scheme: &TileScheme,
) -> Result<SegmentTable> {
    QnqError::check_dims(labels.dims(), colors.dims())?;
    QnqError::check_dims(labels.dims(), image.dims())?;
    let mut acc = SdtAccumulator::new(labels.segment_count());
    for rows in scheme.ranges(labels.height()) {
        acc.accumulate_rows(labels, colors, image, rows)?;
    }
    acc.finish(colors.levels())
}
