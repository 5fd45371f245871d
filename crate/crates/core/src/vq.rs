//! Inductive k-means vector quantization with random or deductive
//! (color-name initialized) codebooks.
//!
//! Assignment is a pure nearest-centroid map with ties going to the lowest
//! index. Updates accumulate exact integer sums, so results do not depend on
//! the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{QnqError, Result};
use crate::naming::{quantize_image, ColorDictionary, ColorMap, FINE_UNKNOWN};
use crate::raster::{RasterImage, BANDS};

/// Assignment maps are stored as 8-bit color maps.
pub const MAX_K: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Codebook {
    pub centroids: Vec<[f64; BANDS]>,
}

impl Codebook {
    pub fn new(centroids: Vec<[f64; BANDS]>) -> Result<Self> {
        if centroids.is_empty() || centroids.len() > MAX_K {
            return Err(QnqError::invalid(format!(
                "codebook size must be in 1..={MAX_K}, got {}",
                centroids.len()
            )));
        }
        if centroids.iter().flatten().any(|c| !(0.0..=255.0).contains(c)) {
            return Err(QnqError::invalid("centroid components must lie in [0, 255]"));
        }
        Ok(Self { centroids })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    #[inline]
    pub fn nearest(&self, px: &[u8]) -> u8 {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d0 = f64::from(px[0]) - c[0];
            let d1 = f64::from(px[1]) - c[1];
            let d2 = f64::from(px[2]) - c[2];
            let d = d0 * d0 + d1 * d1 + d2 * d2;
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best as u8
    }

    /// Centroids rounded half up, as an RGB palette.
    pub fn palette(&self) -> Vec<[u8; BANDS]> {
        self.centroids
            .iter()
            .map(|c| c.map(|v| (v + 0.5).floor().clamp(0.0, 255.0) as u8))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Random { seed: u64 },
    Deductive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iterations: usize,
    pub change_threshold: f64,
    pub init: InitMode,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 49,
            max_iterations: 3,
            change_threshold: 0.05,
            init: InitMode::Random { seed: 0 },
        }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.change_threshold > 0.0 && self.change_threshold < 1.0) {
            return Err(QnqError::invalid(format!(
                "change threshold must be in (0, 1), got {}",
                self.change_threshold
            )));
        }
        if self.max_iterations == 0 {
            return Err(QnqError::invalid("at least one iteration is required"));
        }
        if self.k == 0 || self.k > MAX_K {
            return Err(QnqError::invalid(format!("k must be in 1..={MAX_K}, got {}", self.k)));
        }
        Ok(())
    }
}

/// `k` distinct pixel positions drawn without replacement from a
/// ChaCha8 stream seeded with `seed`.
pub fn init_random(image: &RasterImage, k: usize, seed: u64) -> Result<Codebook> {
    let n = image.pixel_count();
    if k == 0 || k > n {
        return Err(QnqError::invalid(format!("k = {k} must be in 1..={n} (pixel count)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, n, k);
    Codebook::new(
        picks
            .iter()
            .map(|i| image.pixel_at(i).map(f64::from))
            .collect(),
    )
}

/// Per-category means of the named fine codes present in the map; absent
/// categories are dropped.
pub fn init_deductive(image: &RasterImage, fine: &ColorMap) -> Result<Codebook> {
    QnqError::check_dims(image.dims(), fine.dims())?;
    let mut sums = vec![[0u64; BANDS]; usize::from(FINE_UNKNOWN)];
    let mut counts = vec![0u64; usize::from(FINE_UNKNOWN)];
    for (px, &c) in image.samples().chunks_exact(BANDS).zip(fine.codes()) {
        if let Some(s) = sums.get_mut(usize::from(c)) {
            for b in 0..BANDS {
                s[b] += u64::from(px[b]);
            }
            counts[usize::from(c)] += 1;
        }
    }
    let centroids: Vec<[f64; BANDS]> = sums
        .iter()
        .zip(&counts)
        .filter(|(_, &n)| n > 0)
        .map(|(s, &n)| s.map(|v| v as f64 / n as f64))
        .collect();
    if centroids.is_empty() {
        return Err(QnqError::invalid("no named color category is present"));
    }
    Codebook::new(centroids)
}

/// Nearest-centroid map; levels equal the codebook size.
pub fn apply_codebook(image: &RasterImage, codebook: &Codebook) -> ColorMap {
    let mut codes = vec![0u8; image.pixel_count()];
    codes
        .par_chunks_mut(4096)
        .zip(image.samples().par_chunks(4096 * BANDS))
        .for_each(|(out, px)| {
            for (o, p) in out.iter_mut().zip(px.chunks_exact(BANDS)) {
                *o = codebook.nearest(p);
            }
        });
    ColorMap::new(image.width(), image.height(), codebook.k(), codes)
        .expect("assignment codes are below k")
}

/// Exact per-cluster first and second moments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSums {
    pub counts: Vec<u64>,
    pub sums: Vec<[u64; BANDS]>,
    pub squares: Vec<[u64; BANDS]>,
}

impl ClusterSums {
    fn zero(k: usize) -> Self {
        Self {
            counts: vec![0; k],
            sums: vec![[0; BANDS]; k],
            squares: vec![[0; BANDS]; k],
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for i in 0..self.counts.len() {
            self.counts[i] += other.counts[i];
            for b in 0..BANDS {
                self.sums[i][b] += other.sums[i][b];
                self.squares[i][b] += other.squares[i][b];
            }
        }
        self
    }
}

pub fn cluster_sums(image: &RasterImage, assignment: &ColorMap, k: usize) -> ClusterSums {
    image
        .samples()
        .par_chunks(4096 * BANDS)
        .zip(assignment.codes().par_chunks(4096))
        .fold(
            || ClusterSums::zero(k),
            |mut acc, (px, codes)| {
                for (p, &c) in px.chunks_exact(BANDS).zip(codes) {
                    let c = usize::from(c);
                    acc.counts[c] += 1;
                    for b in 0..BANDS {
                        let v = u64::from(p[b]);
                        acc.sums[c][b] += v;
                        acc.squares[c][b] += v * v;
                    }
                }
                acc
            },
        )
        .reduce(|| ClusterSums::zero(k), ClusterSums::merge)
}

/// Centroid `i` becomes the mean of its pixels; empty clusters keep theirs.
pub fn update_centroids(sums: &ClusterSums, previous: &Codebook) -> Codebook {
    let centroids = previous
        .centroids
        .iter()
        .enumerate()
        .map(|(i, old)| {
            let n = sums.counts[i];
            if n == 0 {
                *old
            } else {
                sums.sums[i].map(|s| s as f64 / n as f64)
            }
        })
        .collect();
    Codebook { centroids }
}

/// Total squared error of an assignment against a codebook, from exact
/// per-cluster moments summed in cluster order.
pub fn sse(sums: &ClusterSums, codebook: &Codebook) -> f64 {
    let mut total = 0.0;
    for (i, c) in codebook.centroids.iter().enumerate() {
        let n = sums.counts[i] as f64;
        for b in 0..BANDS {
            let s = sums.sums[i][b] as f64;
            let q = sums.squares[i][b] as f64;
            total += q - 2.0 * c[b] * s + n * c[b] * c[b];
        }
    }
    total.max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOutcome {
    pub codebook: Codebook,
    pub assignment: ColorMap,
    pub iterations_used: usize,
    /// SSE of the initial assignment, then after each iteration.
    pub sse_trace: Vec<f64>,
    pub change_fractions: Vec<f64>,
}

/// Lloyd iterations from an initial codebook.
///
/// Each iteration recomputes centroids from the current assignment, then
/// reassigns. It stops after `max_iterations` or once the fraction of
/// reassigned pixels falls below `change_threshold`.
pub fn kmeans_lloyd(image: &RasterImage, init: Codebook, config: &KMeansConfig) -> Result<KMeansOutcome> {
    config.validate()?;
    let n = image.pixel_count() as f64;
    let k = init.k();
    let mut codebook = init;
    let mut assignment = apply_codebook(image, &codebook);
    let mut sums = cluster_sums(image, &assignment, k);
    let mut sse_trace = vec![sse(&sums, &codebook)];
    let mut change_fractions = Vec::new();
    let mut iterations_used = 0;
    while iterations_used < config.max_iterations {
        codebook = update_centroids(&sums, &codebook);
        let next = apply_codebook(image, &codebook);
        let changed = next
            .codes()
            .par_iter()
            .zip(assignment.codes().par_iter())
            .filter(|(a, b)| a != b)
            .count();
        assignment = next;
        sums = cluster_sums(image, &assignment, k);
        sse_trace.push(sse(&sums, &codebook));
        iterations_used += 1;
        let fraction = changed as f64 / n;
        change_fractions.push(fraction);
        if fraction < config.change_threshold {
            break;
        }
    }
    Ok(KMeansOutcome {
        codebook,
        assignment,
        iterations_used,
        sse_trace,
        change_fractions,
    })
}

/// Initializes per `config.init` and runs Lloyd iterations. Deductive
/// initialization quantizes the image with `dict` first.
pub fn kmeans_run(image: &RasterImage, config: &KMeansConfig, dict: &ColorDictionary) -> Result<KMeansOutcome> {
    config.validate()?;
    let init = match config.init {
        InitMode::Random { seed } => init_random(image, config.k, seed)?,
        InitMode::Deductive => init_deductive(image, &quantize_image(image, dict))?,
    };
    kmeans_lloyd(image, init, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, px: Vec<u8>) -> RasterImage {
        RasterImage::new(w, h, px).unwrap()
    }

    fn cfg(k: usize, iters: usize) -> KMeansConfig {
        KMeansConfig {
            k,
            max_iterations: iters,
            change_threshold: 0.05,
            init: InitMode::Random { seed: 7 },
        }
    }

    #[test]
    fn random_init_k_equals_n_is_a_permutation() {
        let image = img(3, 1, vec![1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let cb = init_random(&image, 3, 11).unwrap();
        let mut got: Vec<[u8; 3]> = cb.centroids.iter().map(|c| c.map(|v| v as u8)).collect();
        got.sort();
        assert_eq!(got, vec![[1, 2, 3], [4, 5, 6], [7, 8, 9]]);
        assert!(init_random(&image, 4, 0).is_err());
        assert!(init_random(&image, 0, 0).is_err());
    }

    #[test]
    fn random_init_is_seed_deterministic() {
        let image = RasterImage::from_fn(16, 16, |x, y| [(x * 16) as u8, (y * 16) as u8, (x ^ y) as u8]).unwrap();
        assert_eq!(init_random(&image, 5, 3).unwrap(), init_random(&image, 5, 3).unwrap());
        let differing = (0..100u64)
            .filter(|&s| init_random(&image, 5, s).unwrap() != init_random(&image, 5, s + 1000).unwrap())
            .count();
        assert!(differing >= 95);
    }

    #[test]
    fn deductive_init_uses_class_means() {
        let image = img(4, 1, vec![10, 0, 0, 20, 0, 0, 0, 50, 0, 0, 0, 90]);
        let fine = ColorMap::new(4, 1, 50, vec![3, 3, 7, 20]).unwrap();
        let cb = init_deductive(&image, &fine).unwrap();
        assert_eq!(cb.centroids, vec![[15.0, 0.0, 0.0], [0.0, 50.0, 0.0], [0.0, 0.0, 90.0]]);
        let constant = RasterImage::filled(3, 3, [9, 9, 9]).unwrap();
        let map = quantize_image(&constant, ColorDictionary::builtin());
        assert_eq!(init_deductive(&constant, &map).unwrap().k(), 1);
    }

    #[test]
    fn fixed_point() {
        let colors = [[0u8, 0, 0], [255, 0, 0], [0, 255, 0], [10, 10, 200]];
        let image = RasterImage::from_fn(8, 8, |x, y| colors[(x + y) % 4]).unwrap();
        let init = Codebook::new(colors.iter().map(|c| c.map(f64::from)).collect()).unwrap();
        let out = kmeans_lloyd(&image, init, &cfg(4, 3)).unwrap();
        assert_eq!(out.iterations_used, 1);
        assert_eq!(out.change_fractions, vec![0.0]);
        assert_eq!(*out.sse_trace.last().unwrap(), 0.0);
    }

    #[test]
    fn single_centroid_goes_to_global_mean() {
        let image = img(2, 1, vec![0, 10, 20, 100, 30, 40]);
        let init = Codebook::new(vec![[1.0, 1.0, 1.0]]).unwrap();
        let out = kmeans_lloyd(&image, init, &cfg(1, 3)).unwrap();
        assert_eq!(out.codebook.centroids, vec![[50.0, 20.0, 30.0]]);
        assert!(out.assignment.codes().iter().all(|&c| c == 0));
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let mut centroids = vec![[200.0, 200.0, 200.0]; 6];
        centroids[2] = [10.0, 0.0, 0.0];
        centroids[5] = [30.0, 0.0, 0.0];
        let cb = Codebook::new(centroids).unwrap();
        assert_eq!(cb.nearest(&[20, 0, 0]), 2);
        let one = Codebook::new(vec![[0.0; 3]]).unwrap();
        let image = RasterImage::from_fn(3, 3, |x, y| [x as u8, y as u8, 9]).unwrap();
        assert!(apply_codebook(&image, &one).codes().iter().all(|&c| c == 0));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(49, 3).validate().is_ok());
        assert!(cfg(0, 3).validate().is_err());
        assert!(cfg(257, 3).validate().is_err());
        assert!(cfg(4, 0).validate().is_err());
        let mut c = cfg(4, 3);
        c.change_threshold = 1.0;
        assert!(c.validate().is_err());
    }

    fn arb_image() -> impl Strategy<Value = RasterImage> {
        (2usize..20, 2usize..20).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), w * h * 3)
                .prop_map(move |px| RasterImage::new(w, h, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn sse_trace_non_increasing(image in arb_image(), k in 1usize..6, seed in any::<u64>()) {
            let k = k.min(image.pixel_count());
            let mut c = cfg(k, 10);
            c.change_threshold = 1e-6;
            c.init = InitMode::Random { seed };
            let out = kmeans_run(&image, &c, ColorDictionary::builtin()).unwrap();
            for w in out.sse_trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-9, "{:?}", out.sse_trace);
            }
        }

        #[test]
        fn update_yields_exact_means(image in arb_image(), seed in any::<u64>()) {
            let k = 3.min(image.pixel_count());
            let cb = init_random(&image, k, seed).unwrap();
            let a = apply_codebook(&image, &cb);
            let sums = cluster_sums(&image, &a, k);
            let upd = update_centroids(&sums, &cb);
            for c in 0..k {
                let members: Vec<&[u8]> = image.samples().chunks(3).zip(a.codes())
                    .filter(|(_, &code)| usize::from(code) == c).map(|(p, _)| p).collect();
                if members.is_empty() { continue; }
                for b in 0..3 {
                    let m = members.iter().map(|p| f64::from(p[b])).sum::<f64>() / members.len() as f64;
                    prop_assert!((m - upd.centroids[c][b]).abs() <= 1e-9 * m.max(1.0));
                }
            }
        }

        #[test]
        fn converged_assignment_is_reproduced(image in arb_image(), seed in any::<u64>()) {
            let k = 4.min(image.pixel_count());
            let mut c = cfg(k, 100);
            c.change_threshold = 1e-9;
            c.init = InitMode::Random { seed };
            let out = kmeans_run(&image, &c, ColorDictionary::builtin()).unwrap();
            prop_assert_eq!(apply_codebook(&image, &out.codebook), out.assignment);
        }
    }
}
