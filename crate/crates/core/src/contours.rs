//! Stage 4: cross-aura contour maps, the roundness shape index and the
//! high-texture rule.
//!
//! A pixel's cross-aura value counts its 4- or 8-neighbors carrying a
//! different code. Neighbors outside the image count as different, so an
//! isolated pixel has a 4-adjacency perimeter of 4 wherever it sits.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{QnqError, Result};
use crate::naming::ColorMap;
use crate::segmentation::LabelMap;

/// Any per-pixel nominal map: color codes or segment ids.
pub trait MultiLevelMap: Sync {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    /// Whether pixels at flat indices `a` and `b` carry the same code.
    fn same(&self, a: usize, b: usize) -> bool;
}

impl MultiLevelMap for ColorMap {
    fn width(&self) -> usize {
        ColorMap::width(self)
    }
    fn height(&self) -> usize {
        ColorMap::height(self)
    }
    #[inline]
    fn same(&self, a: usize, b: usize) -> bool {
        let c = self.codes();
        c[a] == c[b]
    }
}

impl MultiLevelMap for LabelMap {
    fn width(&self) -> usize {
        LabelMap::width(self)
    }
    fn height(&self) -> usize {
        LabelMap::height(self)
    }
    #[inline]
    fn same(&self, a: usize, b: usize) -> bool {
        let l = self.labels();
        l[a] == l[b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuraKind {
    Aura4,
    Aura8,
    Sum,
}

impl AuraKind {
    pub fn max_value(self) -> u8 {
        match self {
            Self::Aura4 => 4,
            Self::Aura8 => 8,
            Self::Sum => 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuraMap {
    pub width: usize,
    pub height: usize,
    pub kind: AuraKind,
    pub values: Vec<u8>,
}

const N4: [(i64, i64); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
const N8: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// One pass over the map; `kind` must be `Aura4` or `Aura8`.
pub fn cross_aura<M: MultiLevelMap>(map: &M, kind: AuraKind) -> Result<AuraMap> {
    let offsets: &[(i64, i64)] = match kind {
        AuraKind::Aura4 => &N4,
        AuraKind::Aura8 => &N8,
        AuraKind::Sum => {
            return Err(QnqError::invalid("a SUM map is built with aura_sum"));
        }
    };
    let (w, h) = (map.width(), map.height());
    let mut values = vec![0u8; w * h];
    values.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            let i = y * w + x;
            *v = offsets
                .iter()
                .filter(|&&(dx, dy)| {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    nx < 0
                        || ny < 0
                        || nx >= w as i64
                        || ny >= h as i64
                        || !map.same(i, ny as usize * w + nx as usize)
                })
                .count() as u8;
        }
    });
    Ok(AuraMap {
        width: w,
        height: h,
        kind,
        values,
    })
}

/// Pointwise AURA4 + AURA8, range 0..=16 (12 is the most a pixel can reach).
pub fn aura_sum(a4: &AuraMap, a8: &AuraMap) -> Result<AuraMap> {
    if a4.kind != AuraKind::Aura4 || a8.kind != AuraKind::Aura8 {
        return Err(QnqError::invalid("aura_sum needs an AURA4 and an AURA8 map"));
    }
    QnqError::check_dims((a4.width, a4.height), (a8.width, a8.height))?;
    Ok(AuraMap {
        width: a4.width,
        height: a4.height,
        kind: AuraKind::Sum,
        values: a4.values.iter().zip(&a8.values).map(|(a, b)| a + b).collect(),
    })
}

/// Sum of AURA4 over every segment, indexed by id. Includes holes and frame.
pub fn perimeters(labels: &LabelMap) -> Result<Vec<u64>> {
    perimeters_from_aura(labels, &cross_aura(labels, AuraKind::Aura4)?)
}

/// Same as [`perimeters`], reusing an AURA4 map computed on `labels`.
pub fn perimeters_from_aura(labels: &LabelMap, aura: &AuraMap) -> Result<Vec<u64>> {
    if aura.kind != AuraKind::Aura4 {
        return Err(QnqError::invalid("perimeters need an AURA4 map"));
    }
    QnqError::check_dims(labels.dims(), (aura.width, aura.height))?;
    let mut pl = vec![0u64; labels.segment_count() as usize];
    for (&id, &v) in labels.labels().iter().zip(&aura.values) {
        pl[id as usize] += u64::from(v);
    }
    Ok(pl)
}

pub fn perimeter_pl(labels: &LabelMap, id: u32) -> Result<u64> {
    if id >= labels.segment_count() {
        return Err(QnqError::invalid(format!(
            "segment id {id} not in 0..{}",
            labels.segment_count()
        )));
    }
    Ok(perimeters(labels)?[id as usize])
}

/// `4 * sqrt(area) / PL`, computed as `sqrt(16 * area / PL^2)` so that
/// squares give exactly 1 and block-scaling leaves the value bit-identical.
pub fn roundness(area: u64, pl: u64) -> Result<f64> {
    if pl == 0 {
        return Err(QnqError::invalid("perimeter of zero"));
    }
    if area == 0 {
        return Err(QnqError::invalid("segment area of zero"));
    }
    if pl < 4 {
        return Err(QnqError::invalid(format!("perimeter {pl} below the minimum of 4")));
    }
    let ratio = (16 * area) as f64 / (pl as f64 * pl as f64);
    Ok(ratio.sqrt().min(1.0))
}

/// Per-pixel high-texture flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextureMask {
    pub width: usize,
    pub height: usize,
    pub high: Vec<bool>,
}

impl TextureMask {
    pub fn high_count(&self) -> usize {
        self.high.iter().filter(|&&h| h).count()
    }

    /// 0 / 255 gray levels.
    pub fn to_gray(&self) -> Vec<u8> {
        self.high.iter().map(|&h| if h { 255 } else { 0 }).collect()
    }
}

/// High texture: the `w x w` window (truncated at borders) holds more than
/// `2w` boundary pixels, a boundary pixel having a nonzero aura value.
pub fn texture_mask(aura: &AuraMap, w: usize) -> Result<TextureMask> {
    texture_mask_with_threshold(aura, w, 2 * w)
}

pub fn texture_mask_with_threshold(aura: &AuraMap, w: usize, threshold: usize) -> Result<TextureMask> {
    if w < 3 || w % 2 == 0 {
        return Err(QnqError::invalid(format!("texture window must be odd and >= 3, got {w}")));
    }
    let (width, height) = (aura.width, aura.height);
    // Summed-area table of the boundary indicator.
    let stride = width + 1;
    let mut sat = vec![0u32; stride * (height + 1)];
    for y in 0..height {
        let mut run = 0u32;
        for x in 0..width {
            run += u32::from(aura.values[y * width + x] > 0);
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + run;
        }
    }
    let r = w / 2;
    let mut high = vec![false; width * height];
    high.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(height));
        for (x, out) in row.iter_mut().enumerate() {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(width));
            let count = sat[y1 * stride + x1] + sat[y0 * stride + x0]
                - sat[y0 * stride + x1]
                - sat[y1 * stride + x0];
            *out = count as usize > threshold;
        }
    });
    Ok(TextureMask {
        width,
        height,
        high,
    })
}
