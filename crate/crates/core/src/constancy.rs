//! Stage 1: self-organizing per-channel histogram stretch for color constancy.
//!
//! Each channel is classified into one of four first-order histogram shapes
//! (central mode only, plus a background spike, plus a foreground spike, or
//! both). Detected background pixels map to 0, foreground pixels to 255, and
//! the retained central mass is stretched linearly onto `[1, 254]`.
//!
//! A background spike is the maximal run of bins starting at bin 0 whose
//! counts exceed `total / 10_000`, provided the run ends before bin 255, holds
//! more than `spike_fraction * total` pixels, and some mass lies beyond it.
//! Foreground spikes mirror this from bin 255 downwards.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{QnqError, Result};
use crate::raster::{compute_histogram_streamed, Histogram256, RasterImage, TileScheme, BANDS};

/// Lowest and highest output levels of the interior linear stretch.
pub const STRETCH_FLOOR: u8 = 1;
pub const STRETCH_CEIL: u8 = 254;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DistributionCategory {
    CentralOnly,
    Background,
    Foreground,
    Both,
}

impl DistributionCategory {
    pub fn has_background(self) -> bool {
        matches!(self, Self::Background | Self::Both)
    }

    pub fn has_foreground(self) -> bool {
        matches!(self, Self::Foreground | Self::Both)
    }
}

/// Anchors of one channel's stretch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StretchParams {
    /// Samples strictly below this bin are background.
    pub background_cut: Option<u8>,
    /// Samples strictly above this bin are foreground.
    pub foreground_cut: Option<u8>,
    pub low: u8,
    pub high: u8,
}

impl StretchParams {
    /// The channel transfer function as a lookup table.
    pub fn lut(&self) -> [u8; 256] {
        let mut lut = [0u8; 256];
        for (v, out) in lut.iter_mut().enumerate() {
            *out = self.map(v as u8);
        }
        lut
    }

    fn map(&self, v: u8) -> u8 {
        if let Some(cut) = self.background_cut {
            if v < cut {
                return 0;
            }
        }
        if let Some(cut) = self.foreground_cut {
            if v > cut {
                return 255;
            }
        }
        if self.low >= self.high {
            return v;
        }
        let span = u32::from(self.high - self.low);
        let offset = u32::from(v.clamp(self.low, self.high) - self.low);
        let range = u32::from(STRETCH_CEIL - STRETCH_FLOOR);
        // half-up rounding of offset * range / span
        let scaled = (2 * offset * range + span) / (2 * span);
        STRETCH_FLOOR + scaled as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstancyConfig {
    /// Fraction (not percent) of retained mass clipped at each end.
    pub clip_percent: f64,
    pub spike_fraction: f64,
    pub max_passes: usize,
}

impl Default for ConstancyConfig {
    fn default() -> Self {
        Self {
            clip_percent: 0.02,
            spike_fraction: 0.02,
            max_passes: 3,
        }
    }
}

impl ConstancyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.clip_percent) {
            return Err(QnqError::invalid(format!(
                "clip fraction {} must lie in [0, 0.5)",
                self.clip_percent
            )));
        }
        if !(0.0..1.0).contains(&self.spike_fraction) {
            return Err(QnqError::invalid(format!(
                "spike fraction {} must lie in [0, 1)",
                self.spike_fraction
            )));
        }
        if self.max_passes == 0 {
            return Err(QnqError::invalid("max passes must be at least 1"));
        }
        Ok(())
    }
}

fn above_noise(count: u64, total: u64) -> bool {
    u128::from(count) * 10_000 > u128::from(total)
}

/// Exclusive end of the run of populated bins starting at bin 0.
fn background_run(hist: &Histogram256) -> Option<usize> {
    let end = hist
        .bins
        .iter()
        .position(|&c| !above_noise(c, hist.total))?;
    (end > 0).then_some(end)
}

/// First bin of the run of populated bins ending at bin 255.
fn foreground_run(hist: &Histogram256) -> Option<usize> {
    let last_gap = hist
        .bins
        .iter()
        .rposition(|&c| !above_noise(c, hist.total))?;
    (last_gap < 255).then_some(last_gap + 1)
}

fn mass(hist: &Histogram256, bins: std::ops::Range<usize>) -> u64 {
    hist.bins[bins].iter().sum()
}

fn detect(hist: &Histogram256, spike_fraction: f64) -> (Option<usize>, Option<usize>) {
    let threshold = spike_fraction * hist.total as f64;
    let bg = background_run(hist).filter(|&end| mass(hist, 0..end) as f64 > threshold);
    let fg = foreground_run(hist).filter(|&start| mass(hist, start..256) as f64 > threshold);
    let bg_ok = bg.filter(|&end| mass(hist, end..fg.unwrap_or(256)) > 0);
    let fg_ok = fg.filter(|&start| mass(hist, bg.unwrap_or(0)..start) > 0);
    (bg_ok, fg_ok)
}

/// Assigns one of the four histogram shapes to a channel.
pub fn classify_distribution(
    hist: &Histogram256,
    spike_fraction: f64,
) -> Result<DistributionCategory> {
    if hist.is_empty() {
        return Err(QnqError::invalid("cannot classify an empty histogram"));
    }
    Ok(match detect(hist, spike_fraction) {
        (None, None) => DistributionCategory::CentralOnly,
        (Some(_), None) => DistributionCategory::Background,
        (None, Some(_)) => DistributionCategory::Foreground,
        (Some(_), Some(_)) => DistributionCategory::Both,
    })
}

/// Computes cut points and percent-clip anchors over the retained histogram.
pub fn plan_stretch(
    hist: &Histogram256,
    category: DistributionCategory,
    clip_percent: f64,
) -> Result<StretchParams> {
    if hist.is_empty() {
        return Err(QnqError::invalid("cannot plan a stretch for an empty histogram"));
    }
    let background_cut = category
        .has_background()
        .then(|| background_run(hist))
        .flatten();
    let foreground_cut = category
        .has_foreground()
        .then(|| foreground_run(hist).map(|start| start - 1))
        .flatten();

    let lo = background_cut.unwrap_or(0);
    let hi = foreground_cut.unwrap_or(255);
    let retained = mass(hist, lo..hi + 1);
    let (low, high) = if retained == 0 || lo > hi {
        (lo.min(255), lo.min(255))
    } else {
        let lower_mass = clip_percent * retained as f64;
        let upper_mass = (1.0 - clip_percent) * retained as f64;
        let mut cum = 0u64;
        let mut low = None;
        let mut high = hi;
        for b in lo..=hi {
            cum += hist.bins[b];
            if low.is_none() && cum as f64 > lower_mass {
                low = Some(b);
            }
            if cum as f64 >= upper_mass {
                high = b;
                break;
            }
        }
        (low.unwrap_or(lo), high)
    };

    Ok(StretchParams {
        background_cut: background_cut.map(|c| c as u8),
        foreground_cut: foreground_cut.map(|c| c as u8),
        low: low as u8,
        high: high as u8,
    })
}

/// Applies a stretch to the samples of one channel.
pub fn stretch_channel(samples: &[u8], params: &StretchParams) -> Vec<u8> {
    let lut = params.lut();
    samples.iter().map(|&v| lut[v as usize]).collect()
}

/// Per-pass record of what the detector saw.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstancyPass {
    pub categories: [DistributionCategory; BANDS],
    /// Channels that were re-stretched in this pass.
    pub stretched: [Option<StretchParams>; BANDS],
}

#[derive(Debug, Clone)]
pub struct ConstancyOutcome {
    pub image: RasterImage,
    pub passes: Vec<ConstancyPass>,
}

pub fn color_constancy(image: &RasterImage, config: &ConstancyConfig) -> Result<ConstancyOutcome> {
    color_constancy_streamed(image, config, &TileScheme::whole(image.height()))
}

/// Stage 1 over row stripes.
///
/// The first pass stretches every channel. Later passes re-detect and only
/// re-stretch channels that still show a background or foreground mode; the
/// loop stops once every channel is central-only or `max_passes` is reached.
pub fn color_constancy_streamed(
    image: &RasterImage,
    config: &ConstancyConfig,
    scheme: &TileScheme,
) -> Result<ConstancyOutcome> {
    config.validate()?;
    let mut current = image.clone();
    let mut passes = Vec::new();
    for pass in 0..config.max_passes {
        let mut categories = [DistributionCategory::CentralOnly; BANDS];
        let mut luts: [Option<[u8; 256]>; BANDS] = [None; BANDS];
        let mut stretched = [None; BANDS];
        for band in 0..BANDS {
            let hist = compute_histogram_streamed(&current, band, scheme)?;
            let category = classify_distribution(&hist, config.spike_fraction)?;
            categories[band] = category;
            if pass == 0 || category != DistributionCategory::CentralOnly {
                let params = plan_stretch(&hist, category, config.clip_percent)?;
                luts[band] = Some(params.lut());
                stretched[band] = Some(params);
            }
        }
        if pass > 0 && luts.iter().all(Option::is_none) {
            break;
        }
        apply_luts(&mut current, &luts, scheme);
        passes.push(ConstancyPass {
            categories,
            stretched,
        });
    }
    Ok(ConstancyOutcome {
        image: current,
        passes,
    })
}

fn apply_luts(image: &mut RasterImage, luts: &[Option<[u8; 256]>; BANDS], scheme: &TileScheme) {
    let row_len = image.width() * BANDS;
    let chunk = scheme.tile_height.max(1) * row_len;
    image.samples_mut().par_chunks_mut(chunk).for_each(|stripe| {
        for px in stripe.chunks_exact_mut(BANDS) {
            for (band, lut) in luts.iter().enumerate() {
                if let Some(lut) = lut {
                    px[band] = lut[px[band] as usize];
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_hist(center: f64, sigma: f64, total: u64) -> Histogram256 {
        let mut bins = [0u64; 256];
        let weights: Vec<f64> = (0..256)
            .map(|b| (-((b as f64 - center).powi(2)) / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f64 = weights.iter().sum();
        for (b, w) in weights.iter().enumerate() {
            bins[b] = (w / sum * total as f64).round() as u64;
        }
        Histogram256::from_bins(bins)
    }

    #[test]
    fn central_gaussian() {
        let h = gaussian_hist(128.0, 20.0, 100_000);
        assert_eq!(
            classify_distribution(&h, 0.02).unwrap(),
            DistributionCategory::CentralOnly
        );
    }

    #[test]
    fn background_spike() {
        let mut h = gaussian_hist(128.0, 20.0, 70_000);
        h.bins[0] += 10_000;
        h.bins[1] += 10_000;
        h.bins[2] += 10_000;
        let h = Histogram256::from_bins(h.bins);
        assert_eq!(
            classify_distribution(&h, 0.02).unwrap(),
            DistributionCategory::Background
        );
    }

    #[test]
    fn double_spike() {
        let mut h = gaussian_hist(128.0, 20.0, 80_000);
        h.bins[0] += 5_000;
        h.bins[1] += 5_000;
        h.bins[254] += 5_000;
        h.bins[255] += 5_000;
        let h = Histogram256::from_bins(h.bins);
        assert_eq!(
            classify_distribution(&h, 0.02).unwrap(),
            DistributionCategory::Both
        );
    }

    #[test]
    fn foreground_spike() {
        let mut h = gaussian_hist(100.0, 15.0, 90_000);
        h.bins[255] += 10_000;
        let h = Histogram256::from_bins(h.bins);
        assert_eq!(
            classify_distribution(&h, 0.02).unwrap(),
            DistributionCategory::Foreground
        );
    }

    #[test]
    fn small_spike_is_ignored() {
        let mut h = gaussian_hist(128.0, 20.0, 99_000);
        h.bins[0] += 1_000;
        let h = Histogram256::from_bins(h.bins);
        assert_eq!(
            classify_distribution(&h, 0.02).unwrap(),
            DistributionCategory::CentralOnly
        );
    }

    #[test]
    fn two_level_image_has_no_central_mode() {
        let mut bins = [0u64; 256];
        bins[0] = 50;
        bins[255] = 50;
        let h = Histogram256::from_bins(bins);
        assert_eq!(
            classify_distribution(&h, 0.02).unwrap(),
            DistributionCategory::CentralOnly
        );
    }

    #[test]
    fn empty_histogram_rejected() {
        assert!(classify_distribution(&Histogram256::default(), 0.02).is_err());
        assert!(plan_stretch(&Histogram256::default(), DistributionCategory::CentralOnly, 0.0).is_err());
    }

    #[test]
    fn uniform_full_range_anchors() {
        let h = Histogram256::from_bins([10; 256]);
        let p = plan_stretch(&h, DistributionCategory::CentralOnly, 0.0).unwrap();
        assert_eq!((p.low, p.high), (0, 255));
        assert_eq!((p.background_cut, p.foreground_cut), (None, None));
    }

    #[test]
    fn constant_channel_anchors() {
        let mut bins = [0u64; 256];
        bins[42] = 99;
        let p = plan_stretch(&Histogram256::from_bins(bins), DistributionCategory::CentralOnly, 0.02)
            .unwrap();
        assert_eq!((p.low, p.high), (42, 42));
        assert_eq!(stretch_channel(&[42, 42], &p), vec![42, 42]);
    }

    #[test]
    fn spike_plus_uniform_block() {
        // 30% at bin 0, the rest spread over 50..=100
        let mut bins = [0u64; 256];
        bins[0] = 3060;
        for b in 50..=100 {
            bins[b] = 140;
        }
        let h = Histogram256::from_bins(bins);
        let cat = classify_distribution(&h, 0.02).unwrap();
        assert_eq!(cat, DistributionCategory::Background);
        let p = plan_stretch(&h, cat, 0.0).unwrap();
        assert_eq!(p.background_cut, Some(1));
        assert_eq!((p.low, p.high), (50, 100));
    }

    #[test]
    fn affine_map_endpoints() {
        let p = StretchParams {
            background_cut: None,
            foreground_cut: None,
            low: 0,
            high: 255,
        };
        let out = stretch_channel(&[0, 255, 128], &p);
        assert_eq!(out[0], 1);
        assert_eq!(out[1], 254);
        // 1 + round(128 * 253 / 255) = 1 + round(126.996) = 128
        assert_eq!(out[2], 128);
    }

    #[test]
    fn background_cut_maps_to_zero() {
        let p = StretchParams {
            background_cut: Some(3),
            foreground_cut: None,
            low: 10,
            high: 200,
        };
        assert_eq!(stretch_channel(&[1], &p), vec![0]);
        let p = StretchParams {
            background_cut: None,
            foreground_cut: Some(240),
            low: 10,
            high: 200,
        };
        assert_eq!(stretch_channel(&[241, 240], &p), vec![255, 254]);
    }

    #[test]
    fn confined_channel_spans_interior() {
        let img = RasterImage::from_fn(51, 4, |x, _| [50 + x as u8, 128, 90]).unwrap();
        let cfg = ConstancyConfig {
            clip_percent: 0.0,
            ..Default::default()
        };
        let out = color_constancy(&img, &cfg).unwrap();
        let r = out.image.band(0);
        assert_eq!(*r.iter().min().unwrap(), 1);
        assert_eq!(*r.iter().max().unwrap(), 254);
    }

    #[test]
    fn constant_image_unchanged() {
        let img = RasterImage::filled(9, 9, [17, 200, 3]).unwrap();
        let out = color_constancy(&img, &ConstancyConfig::default()).unwrap();
        assert_eq!(out.image, img);
    }

    #[test]
    fn full_range_image_is_a_fixed_point() {
        let img = RasterImage::from_fn(256, 3, |x, y| {
            [x as u8, (255 - x) as u8, ((x + 85 * y) % 256) as u8]
        })
        .unwrap();
        let cfg = ConstancyConfig {
            clip_percent: 0.0,
            ..Default::default()
        };
        let first = color_constancy(&img, &cfg).unwrap();
        assert!(first.passes[0]
            .categories
            .iter()
            .all(|c| *c == DistributionCategory::CentralOnly));
        for band in 0..3 {
            let b = first.image.band(band);
            assert_eq!(*b.iter().min().unwrap(), 1);
            assert_eq!(*b.iter().max().unwrap(), 254);
        }
        let second = color_constancy(&first.image, &cfg).unwrap();
        assert_eq!(second.passes[0].categories, first.passes[0].categories);
    }

    #[test]
    fn spikes_converge_within_max_passes() {
        let img = RasterImage::from_fn(64, 64, |x, y| {
            let v = if x < 16 { 0 } else if x > 56 { 255 } else { 60 + ((x * 7 + y * 3) % 90) as u8 };
            [v, v / 2, 255 - v / 3]
        })
        .unwrap();
        let out = color_constancy(&img, &ConstancyConfig::default()).unwrap();
        assert!(!out.passes.is_empty() && out.passes.len() <= 3);
        assert!(out.passes[0].categories[0].has_background());
    }
}
