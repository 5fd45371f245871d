use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::Parser;
use qnq_core::constancy::ConstancyConfig;
use qnq_core::naming::{validate_dictionary, ColorDictionary};
use qnq_core::pipeline::{run_cross_validation, run_pipeline, EmitSet, PipelineConfig, Quantizer};
use qnq_core::raster::DEFAULT_RAM_BUDGET;
use qnq_core::segmentation::Connectivity;
use qnq_core::vq::KMeansConfig;
use qnq_core::QnqError;

#[derive(Parser, Debug)]
#[command(name = "qnq", version)]
#[command(about = "RGB image to color names to superpixels to piecewise-constant reconstruction")]
struct Args {
    /// Input image (8-bit RGB PNG or binary PPM)
    #[arg(long)]
    input: Option<PathBuf>,

    /// Output directory for artifacts
    #[arg(long)]
    out: Option<PathBuf>,

    /// rgbiam, kmeans or hybrid
    #[arg(long, default_value = "rgbiam")]
    quantizer: Quantizer,

    /// Color dictionary file; the built-in dictionary is used otherwise
    #[arg(long)]
    dictionary: Option<PathBuf>,

    /// Print the active dictionary and exit
    #[arg(long)]
    dump_dictionary: bool,

    /// Sweep the whole RGB cube through the dictionary and print the result
    #[arg(long)]
    validate_dictionary: bool,

    /// Rows per stripe; derived from the RAM budget when omitted
    #[arg(long)]
    tile_height: Option<usize>,

    /// Bytes available to tile buffers
    #[arg(long, default_value_t = DEFAULT_RAM_BUDGET)]
    ram_budget: usize,

    /// Superpixel adjacency, 4 or 8
    #[arg(long, default_value = "8")]
    connectivity: Connectivity,

    /// Fraction clipped at each histogram tail before stretching
    #[arg(long, default_value_t = 0.02)]
    clip_percent: f64,

    /// Minimum mass fraction of a background or foreground mode
    #[arg(long, default_value_t = 0.02)]
    spike_fraction: f64,

    #[arg(long, default_value_t = 3)]
    max_passes: usize,

    /// k-means codebook size
    #[arg(long)]
    k: Option<usize>,

    /// k-means iteration cap
    #[arg(long)]
    iters: Option<usize>,

    /// Stop when fewer than this fraction of pixels change cluster
    #[arg(long)]
    change_threshold: Option<f64>,

    /// Seed for random k-means initialization
    #[arg(long)]
    seed: Option<u64>,

    /// Odd window size of the high-texture rule
    #[arg(long, default_value_t = 5)]
    texture_window: usize,

    /// Comma-separated artifacts: constancy, maps, packed, segments,
    /// contours, texture, sdt, reconstruction, error, report, all, none
    #[arg(long, default_value = "all")]
    emit: EmitSet,

    /// Run the cross-validation harness over these images instead
    #[arg(long, num_args = 2..)]
    cross_validate: Vec<PathBuf>,
}

fn exit_code(err: &QnqError) -> u8 {
    match err.class() {
        "io" => 3,
        "format" => 4,
        "capacity" => 5,
        "integrity" => 6,
        _ => 2,
    }
}

fn config(args: &Args) -> PipelineConfig {
    let defaults = KMeansConfig::default();
    PipelineConfig {
        quantizer: args.quantizer,
        tile_height: args.tile_height,
        ram_budget: args.ram_budget,
        connectivity: args.connectivity,
        constancy: ConstancyConfig {
            clip_percent: args.clip_percent,
            spike_fraction: args.spike_fraction,
            max_passes: args.max_passes,
        },
        kmeans: KMeansConfig {
            k: args.k.unwrap_or(defaults.k),
            max_iterations: args.iters.unwrap_or(defaults.max_iterations),
            change_threshold: args.change_threshold.unwrap_or(defaults.change_threshold),
            init: defaults.init,
        },
        seed: args.seed.unwrap_or(0),
        texture_window: args.texture_window,
        emit: args.emit,
    }
}

fn run(args: Args) -> anyhow::Result<()> {
    let dict = match &args.dictionary {
        Some(path) => ColorDictionary::load(path)
            .with_context(|| format!("loading dictionary {}", path.display()))?,
        None => ColorDictionary::builtin().clone(),
    };
    if args.dump_dictionary {
        print!("{}", dict.to_text());
        return Ok(());
    }
    if args.validate_dictionary {
        let report = validate_dictionary(&dict);
        println!("{}", serde_json::to_string(&report)?);
        return Ok(());
    }

    let cfg = config(&args);
    let kmeans_knobs = args.k.is_some() || args.iters.is_some() || args.change_threshold.is_some() || args.seed.is_some();
    if cfg.quantizer == Quantizer::Rgbiam && kmeans_knobs && args.cross_validate.is_empty() {
        eprintln!(r#"{{"warning":"k-means options are ignored by the rgbiam quantizer"}}"#);
    }
    let out = args
        .out
        .as_ref()
        .ok_or_else(|| anyhow!(QnqError::InvalidArgument("--out is required".into())))?;

    if !args.cross_validate.is_empty() {
        let report = run_cross_validation(&args.cross_validate, out, &cfg, &dict)?;
        for t in &report.zscores.totals {
            let cells: Vec<String> = t.total.iter().map(|v| format!("{v:.2}")).collect();
            println!("total {} {}", t.indicator, cells.join(" "));
        }
        return Ok(());
    }

    let input = args
        .input
        .as_ref()
        .ok_or_else(|| anyhow!(QnqError::InvalidArgument("--input is required".into())))?;
    let report = run_pipeline(input, out, &cfg, &dict)?;
    for level in &report.levels {
        println!(
            "{}: {} segments, mean area {:.2}, rmse {:.4} {:.4} {:.4}",
            level.name, level.segment_count, level.mean_area, level.rmse[0], level.rmse[1], level.rmse[2]
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (class, code) = match err.downcast_ref::<QnqError>() {
                Some(e) => (e.class(), exit_code(e)),
                None => ("format", 4),
            };
            let line = serde_json::json!({ "error": class, "message": format!("{err:#}") });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
