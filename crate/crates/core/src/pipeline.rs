//! Stage orchestration and artifact output.
//!
//! [`run_stages`] computes everything in memory. [`run_pipeline`] reads the
//! input, runs the stages and writes the selected artifacts. Wall-clock
//! timings go to `timings.json`; every other artifact is a pure function of
//! the input and the configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::codec::{encode_labels, pack_colormap};
use crate::constancy::{color_constancy_streamed, ConstancyConfig, ConstancyOutcome, ConstancyPass};
use crate::contours::{aura_sum, cross_aura, perimeters_from_aura, roundness, texture_mask, AuraKind, AuraMap, TextureMask};
use crate::error::{QnqError, Result};
use crate::io::{read_image, write_bytes, write_gray_png, write_image};
use crate::naming::{coarsen, quantize_image_streamed, ColorDictionary, ColorMap, COARSE_LEVELS, COARSE_PALETTE, FINE_LEVELS};
use crate::qa::{cross_validate, CrossValidationConfig, IndicatorTable, ZTable};
use crate::raster::{RasterImage, TileScheme, BANDS, DEFAULT_RAM_BUDGET};
use crate::reconstruction::{compression_report, error_image, object_mean_view, rmse_bands, CompressionReport, ErrorImage, ErrorSummary};
use crate::sdt::{build_sdt_streamed, memory_estimate, SegmentTable};
use crate::segmentation::{label_components_streamed, Connectivity, LabelMap};
use crate::vq::{kmeans_lloyd, init_deductive, init_random, InitMode, KMeansConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantizer {
    #[default]
    Rgbiam,
    Kmeans,
    Hybrid,
}

impl FromStr for Quantizer {
    type Err = QnqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgbiam" => Ok(Self::Rgbiam),
            "kmeans" => Ok(Self::Kmeans),
            "hybrid" => Ok(Self::Hybrid),
            _ => Err(QnqError::invalid(format!(
                "quantizer must be rgbiam, kmeans or hybrid, got {s}"
            ))),
        }
    }
}

/// Which artifacts to write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EmitSet {
    pub constancy: bool,
    pub maps: bool,
    pub packed: bool,
    pub segments: bool,
    pub contours: bool,
    pub texture: bool,
    pub sdt: bool,
    pub reconstruction: bool,
    pub error: bool,
    pub report: bool,
}

pub const ARTIFACT_NAMES: [&str; 10] = [
    "constancy",
    "maps",
    "packed",
    "segments",
    "contours",
    "texture",
    "sdt",
    "reconstruction",
    "error",
    "report",
];

impl EmitSet {
    pub fn all() -> Self {
        Self::from_flags(true)
    }

    pub fn none() -> Self {
        Self::from_flags(false)
    }

    fn from_flags(on: bool) -> Self {
        Self {
            constancy: on,
            maps: on,
            packed: on,
            segments: on,
            contours: on,
            texture: on,
            sdt: on,
            reconstruction: on,
            error: on,
            report: on,
        }
    }

    fn flag(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "constancy" => &mut self.constancy,
            "maps" => &mut self.maps,
            "packed" => &mut self.packed,
            "segments" => &mut self.segments,
            "contours" => &mut self.contours,
            "texture" => &mut self.texture,
            "sdt" => &mut self.sdt,
            "reconstruction" => &mut self.reconstruction,
            "error" => &mut self.error,
            "report" => &mut self.report,
            _ => return None,
        })
    }
}

impl Default for EmitSet {
    fn default() -> Self {
        Self::all()
    }
}

impl FromStr for EmitSet {
    type Err = QnqError;

    /// Comma-separated artifact names, `all` or `none`.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = Self::none();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            match name {
                "all" => set = Self::all(),
                "none" => set = Self::none(),
                _ => {
                    *set.flag(name).ok_or_else(|| {
                        QnqError::invalid(format!(
                            "unknown artifact {name}; expected one of {}",
                            ARTIFACT_NAMES.join(", ")
                        ))
                    })? = true;
                }
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub quantizer: Quantizer,
    /// Fixed stripe height; derived from the budget when absent.
    pub tile_height: Option<usize>,
    pub ram_budget: usize,
    pub connectivity: Connectivity,
    pub constancy: ConstancyConfig,
    pub kmeans: KMeansConfig,
    pub seed: u64,
    pub texture_window: usize,
    pub emit: EmitSet,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            quantizer: Quantizer::Rgbiam,
            tile_height: None,
            ram_budget: DEFAULT_RAM_BUDGET,
            connectivity: Connectivity::Eight,
            constancy: ConstancyConfig::default(),
            kmeans: KMeansConfig::default(),
            seed: 0,
            texture_window: 5,
            emit: EmitSet::all(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.constancy.validate()?;
        if self.quantizer != Quantizer::Rgbiam {
            self.kmeans.validate()?;
        }
        if self.texture_window < 3 || self.texture_window % 2 == 0 {
            return Err(QnqError::invalid(format!(
                "texture window must be odd and >= 3, got {}",
                self.texture_window
            )));
        }
        if self.ram_budget == 0 {
            return Err(QnqError::invalid("ram budget must be positive"));
        }
        Ok(())
    }

    pub fn scheme(&self, width: usize, height: usize) -> Result<TileScheme> {
        match self.tile_height {
            Some(t) => {
                let s = TileScheme::new(t, self.ram_budget)?;
                s.check(width)?;
                Ok(s)
            }
            None => TileScheme::fit(width, height, self.ram_budget),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundnessSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Everything derived from one color map.
#[derive(Debug, Clone)]
pub struct LevelResult {
    pub name: &'static str,
    pub map: ColorMap,
    pub palette: Vec<[u8; BANDS]>,
    pub labels: LabelMap,
    pub table: SegmentTable,
    pub aura4: AuraMap,
    pub aura8: AuraMap,
    pub roundness: RoundnessSummary,
    pub reconstruction: RasterImage,
    pub error: ErrorImage,
    pub rmse: [f64; BANDS],
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTime {
    pub stage: &'static str,
    pub ms: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub constancy: ConstancyOutcome,
    pub levels: Vec<LevelResult>,
    pub aura_sum: AuraMap,
    pub texture: TextureMask,
    pub scheme: TileScheme,
    pub timings: Vec<StageTime>,
}

struct Clock(Vec<StageTime>);

impl Clock {
    fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        match self.0.iter_mut().find(|t| t.stage == stage) {
            Some(t) => t.ms += ms,
            None => self.0.push(StageTime { stage, ms }),
        }
        Ok(out)
    }
}

/// Stages 1 to 6 in memory.
pub fn run_stages(image: &RasterImage, config: &PipelineConfig, dict: &ColorDictionary) -> Result<PipelineOutput> {
    config.validate()?;
    let scheme = config.scheme(image.width(), image.height())?;
    let mut clock = Clock(Vec::new());

    let constancy = clock.time("constancy", || color_constancy_streamed(image, &config.constancy, &scheme))?;
    let normalized = &constancy.image;

    let maps: Vec<(&'static str, ColorMap, Vec<[u8; BANDS]>)> = match config.quantizer {
        Quantizer::Rgbiam => clock.time("quantization", || {
            let fine = quantize_image_streamed(normalized, dict, &scheme);
            let coarse = coarsen(&fine, dict)?;
            Ok(vec![
                ("fine", fine, dict.palette.clone()),
                ("coarse", coarse, COARSE_PALETTE.to_vec()),
            ])
        })?,
        Quantizer::Kmeans | Quantizer::Hybrid => clock.time("quantization", || {
            let init = if config.quantizer == Quantizer::Kmeans {
                init_random(normalized, config.kmeans.k, config.seed)?
            } else {
                init_deductive(normalized, &quantize_image_streamed(normalized, dict, &scheme))?
            };
            let mut kc = config.kmeans;
            kc.init = match config.quantizer {
                Quantizer::Kmeans => InitMode::Random { seed: config.seed },
                _ => InitMode::Deductive,
            };
            let out = kmeans_lloyd(normalized, init, &kc)?;
            let palette = out.codebook.palette();
            Ok(vec![("kmeans", out.assignment, palette)])
        })?,
    };

    let mut levels = Vec::with_capacity(maps.len());
    for (name, map, palette) in maps {
        let labels = clock.time("segmentation", || label_components_streamed(&map, &scheme, config.connectivity))?;
        let (aura4, aura8) = clock.time("contours", || {
            Ok((cross_aura(&labels, AuraKind::Aura4)?, cross_aura(&labels, AuraKind::Aura8)?))
        })?;
        let table = clock.time("sdt", || build_sdt_streamed(&labels, &map, normalized, &scheme))?;
        let round = clock.time("contours", || {
            let pl = perimeters_from_aura(&labels, &aura4)?;
            let mut s = RoundnessSummary {
                min: f64::INFINITY,
                mean: 0.0,
                max: 0.0,
            };
            for (r, &p) in table.records.iter().zip(&pl) {
                let v = roundness(r.area, p)?;
                s.min = s.min.min(v);
                s.max = s.max.max(v);
                s.mean += v;
            }
            s.mean /= table.records.len() as f64;
            Ok(s)
        })?;
        let (reconstruction, error, rmse) = clock.time("reconstruction", || {
            let view = object_mean_view(&labels, &table)?;
            let err = error_image(normalized, &view)?;
            let rmse = rmse_bands(normalized, &view)?;
            Ok((view, err, rmse))
        })?;
        levels.push(LevelResult {
            name,
            map,
            palette,
            labels,
            table,
            aura4,
            aura8,
            roundness: round,
            reconstruction,
            error,
            rmse,
        });
    }

    let (sum, texture) = clock.time("contours", || {
        let first = &levels[0];
        Ok((
            aura_sum(&first.aura4, &first.aura8)?,
            texture_mask(&first.aura4, config.texture_window)?,
        ))
    })?;

    Ok(PipelineOutput {
        constancy,
        levels,
        aura_sum: sum,
        texture,
        scheme,
        timings: clock.0,
    })
}

fn fixed(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn fixed3(x: [f64; BANDS]) -> [f64; BANDS] {
    x.map(fixed)
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelReport {
    pub name: &'static str,
    pub levels: usize,
    pub segment_count: u32,
    pub mean_area: f64,
    pub rmse: [f64; BANDS],
    pub error_norm: ErrorSummary,
    pub roundness: RoundnessSummary,
    pub sdt_memory_estimate_bytes: u64,
    pub sdt_actual_bytes: u64,
    pub compression: CompressionReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct TilingReport {
    pub tile_height: usize,
    pub stripes: usize,
    pub ram_budget: usize,
    pub peak_tile_bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProcessReport {
    /// No user-supplied free parameters or training data were needed.
    pub automatic: bool,
    pub free_parameters: Vec<&'static str>,
    pub linear_passes: bool,
}

/// Machine-readable summary of one run; `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub input: String,
    pub width: usize,
    pub height: usize,
    pub pixels: u64,
    pub config: PipelineConfig,
    pub tiling: TilingReport,
    pub constancy: Vec<ConstancyPass>,
    pub levels: Vec<LevelReport>,
    pub high_texture_fraction: f64,
    pub compression: Vec<CompressionReport>,
    pub process: ProcessReport,
}

pub fn build_report(input: &str, image: &RasterImage, config: &PipelineConfig, out: &PipelineOutput) -> Result<RunReport> {
    let n = image.pixel_count();
    let levels = out
        .levels
        .iter()
        .map(|l| {
            let count = l.labels.segment_count();
            let e = l.error.summary();
            Ok(LevelReport {
                name: l.name,
                levels: l.map.levels(),
                segment_count: count,
                mean_area: fixed(n as f64 / f64::from(count)),
                rmse: fixed3(l.rmse),
                error_norm: ErrorSummary {
                    min: fixed(e.min),
                    mean: fixed(e.mean),
                    max: fixed(e.max),
                },
                roundness: RoundnessSummary {
                    min: fixed(l.roundness.min),
                    mean: fixed(l.roundness.mean),
                    max: fixed(l.roundness.max),
                },
                sdt_memory_estimate_bytes: memory_estimate(u64::from(count)),
                sdt_actual_bytes: l.table.actual_bytes(),
                compression: compression_report(l.map.levels().max(2))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let free_parameters = match config.quantizer {
        Quantizer::Rgbiam => vec![],
        _ => vec!["k", "max_iterations", "change_threshold", "seed"],
    };
    Ok(RunReport {
        input: input.to_string(),
        width: image.width(),
        height: image.height(),
        pixels: n as u64,
        config: *config,
        tiling: TilingReport {
            tile_height: out.scheme.tile_height,
            stripes: out.scheme.ranges(image.height()).len(),
            ram_budget: out.scheme.ram_budget,
            peak_tile_bytes: out.scheme.peak_tile_bytes(image.width(), image.height()),
        },
        constancy: out.constancy.passes.clone(),
        levels,
        high_texture_fraction: fixed(out.texture.high_count() as f64 / n as f64),
        compression: vec![compression_report(FINE_LEVELS)?, compression_report(COARSE_LEVELS)?],
        process: ProcessReport {
            automatic: config.quantizer == Quantizer::Rgbiam,
            free_parameters,
            linear_passes: true,
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Timings {
    pub read_ms: f64,
    pub stages: Vec<StageTime>,
    pub compute_ms: f64,
    pub write_ms: f64,
}

/// Reads `input`, runs all stages and writes the selected artifacts to `out_dir`.
pub fn run_pipeline(input: &Path, out_dir: &Path, config: &PipelineConfig, dict: &ColorDictionary) -> Result<RunReport> {
    config.validate()?;
    let t0 = Instant::now();
    let image = read_image(input)?;
    let read_ms = t0.elapsed().as_secs_f64() * 1e3;
    let output = run_stages(&image, config, dict)?;
    let input_name = input
        .file_name()
        .map_or_else(|| input.display().to_string(), |n| n.to_string_lossy().into_owned());
    let report = build_report(&input_name, &image, config, &output)?;

    let t1 = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    write_artifacts(out_dir, config, &output, &report)?;
    let write_ms = t1.elapsed().as_secs_f64() * 1e3;

    let timings = Timings {
        read_ms,
        compute_ms: output.timings.iter().map(|t| t.ms).sum(),
        stages: output.timings.clone(),
        write_ms,
    };
    write_json(&out_dir.join("timings.json"), &timings)?;
    Ok(report)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| QnqError::format(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Paths of everything [`run_pipeline`] writes for `config`, timings excluded.
pub fn write_artifacts(out: &Path, config: &PipelineConfig, output: &PipelineOutput, report: &RunReport) -> Result<Vec<PathBuf>> {
    let e = &config.emit;
    let mut written = Vec::new();
    let mut put = |name: String, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let path = out.join(name);
        f(&path)?;
        written.push(path);
        Ok(())
    };
    if e.constancy {
        put("constancy.png".into(), &|p| write_image(p, &output.constancy.image))?;
    }
    for level in &output.levels {
        let n = level.name;
        let (w, h) = level.map.dims();
        if e.maps {
            put(format!("{n}_map.png"), &|p| write_image(p, &level.map.render(&level.palette)?))?;
        }
        if e.packed && (level.map.levels() == FINE_LEVELS || level.map.levels() == COARSE_LEVELS) {
            put(format!("{n}_map.qnq"), &|p| write_bytes(p, &pack_colormap(&level.map)?))?;
        }
        if e.segments {
            put(format!("{n}_segments.seg"), &|p| write_bytes(p, &encode_labels(&level.labels)?))?;
        }
        if e.contours {
            put(format!("{n}_aura4.png"), &|p| write_gray_png(p, w, h, &level.aura4.values))?;
            put(format!("{n}_aura8.png"), &|p| write_gray_png(p, w, h, &level.aura8.values))?;
        }
        if e.sdt {
            put(format!("{n}_sdt.csv"), &|p| write_bytes(p, level.table.to_csv().as_bytes()))?;
        }
        if e.reconstruction {
            put(format!("{n}_reconstruction.png"), &|p| write_image(p, &level.reconstruction))?;
        }
        if e.error {
            put(format!("{n}_error_norm.png"), &|p| write_gray_png(p, w, h, &level.error.norm_gray()))?;
            put(format!("{n}_error_abs.png"), &|p| write_image(p, &level.error.abs_diff_image()?))?;
        }
    }
    let (w, h) = (output.aura_sum.width, output.aura_sum.height);
    if e.contours {
        put("aura_sum.png".into(), &|p| write_gray_png(p, w, h, &output.aura_sum.values))?;
    }
    if e.texture {
        put("texture.png".into(), &|p| write_gray_png(p, w, h, &output.texture.to_gray()))?;
    }
    if e.report {
        put("report.json".into(), &|p| write_json(p, report))?;
    }
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossValidationReport {
    pub inputs: Vec<String>,
    pub indicators: IndicatorTable,
    pub zscores: ZTable,
}

/// Three-fold (or n-fold) cross-validation over `inputs`; writes
/// `indicators.csv`, `zscores.csv` and `cross_validation.json`.
pub fn run_cross_validation(
    inputs: &[PathBuf],
    out_dir: &Path,
    config: &PipelineConfig,
    dict: &ColorDictionary,
) -> Result<CrossValidationReport> {
    config.validate()?;
    config.kmeans.validate()?;
    let images = inputs.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
    let cv = cross_validate(
        &images,
        &CrossValidationConfig {
            constancy: config.constancy,
            connectivity: config.connectivity,
            kmeans: config.kmeans,
            seed: config.seed,
        },
        dict,
    )?;
    let zscores = cv.table.standardize()?;
    std::fs::create_dir_all(out_dir)?;
    write_bytes(&out_dir.join("indicators.csv"), cv.table.to_csv().as_bytes())?;
    write_bytes(&out_dir.join("zscores.csv"), zscores.to_csv().as_bytes())?;
    let report = CrossValidationReport {
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        indicators: cv.table,
        zscores,
    };
    write_json(&out_dir.join("cross_validation.json"), &report)?;
    Ok(report)
}
