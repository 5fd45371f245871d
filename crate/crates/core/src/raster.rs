//! Image representation, row-stripe tiling, histograms and byte coding.

use std::ops::Range;

use crate::error::{QnqError, Result};

/// Number of bands in every image handled by the pipeline.
pub const BANDS: usize = 3;

/// Default dynamic memory budget for tile-local buffers, in bytes.
pub const DEFAULT_RAM_BUDGET: usize = 800_000_000;

/// Worst-case bytes of stripe-local working memory per pixel.
///
/// The connected-component pass dominates: a provisional label (4), a
/// union-find parent (4) and rank (1) per provisional label, the dense
/// remapping (4), plus slack for the stripe's code row copies.
pub const TILE_BYTES_PER_PIXEL: usize = 16;

/// A width x height grid of 8-bit RGB samples, row-major and band-interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(QnqError::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(BANDS))
            .ok_or_else(|| QnqError::capacity("image size overflows the address space"))?;
        if samples.len() != expected {
            return Err(QnqError::format(format!(
                "expected {expected} samples for a {width}x{height} RGB image, got {}",
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    /// Uniform image of one color.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let n = width.checked_mul(height).unwrap_or(0);
        let mut samples = Vec::with_capacity(n * BANDS);
        for _ in 0..n {
            samples.extend_from_slice(&rgb);
        }
        Self::new(width, height, samples)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height * BANDS);
        for y in 0..height {
            for x in 0..width {
                samples.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// N, the number of pixels.
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [u8] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * BANDS;
        [self.samples[i], self.samples[i + 1], self.samples[i + 2]]
    }

    /// Pixel by linear (row-major) index.
    pub fn pixel_at(&self, index: usize) -> [u8; 3] {
        let i = index * BANDS;
        [self.samples[i], self.samples[i + 1], self.samples[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.samples.chunks_exact(BANDS).map(|p| [p[0], p[1], p[2]])
    }

    /// One band as a contiguous vector.
    pub fn band(&self, band: usize) -> Vec<u8> {
        self.samples.iter().skip(band).step_by(BANDS).copied().collect()
    }

    /// Ordered, disjoint full-width row stripes covering the image.
    pub fn stripes(&self, scheme: &TileScheme) -> Vec<Stripe<'_>> {
        stream_tiles(self, scheme)
    }
}

/// A borrowed full-width band of consecutive rows.
#[derive(Debug, Clone, Copy)]
pub struct Stripe<'a> {
    pub first_row: usize,
    pub rows: usize,
    pub width: usize,
    pub samples: &'a [u8],
}

impl Stripe<'_> {
    pub fn row_range(&self) -> Range<usize> {
        self.first_row..self.first_row + self.rows
    }
}

/// Row-stripe tiling under a memory budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileScheme {
    pub tile_height: usize,
    pub ram_budget: usize,
}

impl TileScheme {
    pub fn new(tile_height: usize, ram_budget: usize) -> Result<Self> {
        if tile_height == 0 {
            return Err(QnqError::invalid("tile height must be at least 1"));
        }
        if ram_budget == 0 {
            return Err(QnqError::invalid("ram budget must be positive"));
        }
        Ok(Self {
            tile_height,
            ram_budget,
        })
    }

    /// Stripes of `tile_height` rows under the default budget.
    pub fn rows(tile_height: usize) -> Result<Self> {
        Self::new(tile_height, DEFAULT_RAM_BUDGET)
    }

    /// A single stripe covering `height` rows.
    pub fn whole(height: usize) -> Self {
        Self {
            tile_height: height.max(1),
            ram_budget: usize::MAX,
        }
    }

    /// Tallest stripes such that one stripe per worker thread fits the budget.
    pub fn fit(width: usize, height: usize, ram_budget: usize) -> Result<Self> {
        let row_bytes = Self::row_bytes(width);
        if row_bytes > ram_budget {
            return Err(QnqError::capacity(format!(
                "a single {width}-pixel row needs {row_bytes} bytes of tile buffers, budget is {ram_budget}"
            )));
        }
        let workers = rayon::current_num_threads().max(1);
        let rows = (ram_budget / (row_bytes * workers)).max(1);
        Self::new(rows.min(height.max(1)), ram_budget)
    }

    pub fn row_bytes(width: usize) -> usize {
        width.saturating_mul(TILE_BYTES_PER_PIXEL)
    }

    /// Tile-local buffer bytes for one stripe of this scheme.
    pub fn stripe_bytes(&self, width: usize) -> usize {
        Self::row_bytes(width).saturating_mul(self.tile_height)
    }

    /// Fails when a single stripe does not fit the budget.
    pub fn check(&self, width: usize) -> Result<()> {
        let bytes = self.stripe_bytes(width);
        if bytes > self.ram_budget {
            return Err(QnqError::capacity(format!(
                "stripes of {} rows need {bytes} bytes of tile buffers, budget is {}",
                self.tile_height, self.ram_budget
            )));
        }
        Ok(())
    }

    /// How many stripes may hold buffers at the same time.
    pub fn concurrent_stripes(&self, width: usize) -> usize {
        (self.ram_budget / self.stripe_bytes(width).max(1)).max(1)
    }

    /// Upper bound on simultaneously live tile buffers for a whole image.
    pub fn peak_tile_bytes(&self, width: usize, height: usize) -> usize {
        let stripes = self.ranges(height).len();
        self.stripe_bytes(width)
            .saturating_mul(stripes.min(self.concurrent_stripes(width)))
    }

    /// Row ranges, top to bottom. Tile heights above `height` clamp to one stripe.
    pub fn ranges(&self, height: usize) -> Vec<Range<usize>> {
        let step = self.tile_height.max(1);
        (0..height)
            .step_by(step)
            .map(|start| start..(start + step).min(height))
            .collect()
    }
}

/// Splits an image into ordered, disjoint full-width row stripes.
pub fn stream_tiles<'a>(image: &'a RasterImage, scheme: &TileScheme) -> Vec<Stripe<'a>> {
    let row_len = image.width * BANDS;
    scheme
        .ranges(image.height)
        .into_iter()
        .map(|rows| Stripe {
            first_row: rows.start,
            rows: rows.len(),
            width: image.width,
            samples: &image.samples[rows.start * row_len..rows.end * row_len],
        })
        .collect()
}

/// First-order histogram of one 8-bit channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram256 {
    pub bins: [u64; 256],
    pub total: u64,
}

impl Default for Histogram256 {
    fn default() -> Self {
        Self {
            bins: [0; 256],
            total: 0,
        }
    }
}

impl Histogram256 {
    pub fn from_values(values: impl IntoIterator<Item = u8>) -> Self {
        let mut hist = Self::default();
        for v in values {
            hist.bins[v as usize] += 1;
            hist.total += 1;
        }
        hist
    }

    pub fn from_bins(bins: [u64; 256]) -> Self {
        let total = bins.iter().sum();
        Self { bins, total }
    }

    /// Band histogram of interleaved RGB samples.
    pub fn from_interleaved(samples: &[u8], band: usize) -> Self {
        Self::from_values(samples.iter().skip(band).step_by(BANDS).copied())
    }

    pub fn merge(&mut self, other: &Histogram256) {
        for (a, b) in self.bins.iter_mut().zip(other.bins.iter()) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

/// Histogram of one band of the image.
pub fn compute_histogram(image: &RasterImage, band: usize) -> Result<Histogram256> {
    if band >= BANDS {
        return Err(QnqError::invalid(format!("band index {band} out of range 0..3")));
    }
    Ok(Histogram256::from_interleaved(&image.samples, band))
}

/// Histogram of one band accumulated stripe by stripe.
pub fn compute_histogram_streamed(
    image: &RasterImage,
    band: usize,
    scheme: &TileScheme,
) -> Result<Histogram256> {
    if band >= BANDS {
        return Err(QnqError::invalid(format!("band index {band} out of range 0..3")));
    }
    use rayon::prelude::*;
    let parts: Vec<Histogram256> = stream_tiles(image, scheme)
        .par_iter()
        .map(|s| Histogram256::from_interleaved(s.samples, band))
        .collect();
    let mut hist = Histogram256::default();
    for part in &parts {
        hist.merge(part);
    }
    Ok(hist)
}

/// Codes a unit-range real as an 8-bit sample, `round(value * 255)` half-up.
///
/// The reconstruction `sample / 255` is off by at most `(1/255)/2`.
pub fn byte_encode_unit(value: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&value) {
        return Err(QnqError::Range(value));
    }
    Ok((value * 255.0 + 0.5).floor() as u8)
}
