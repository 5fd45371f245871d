use std::fs;

use qnq_core::codec::{decode_labels, unpack_colormap};
use qnq_core::io::{read_image, write_image};
use qnq_core::naming::{coarsen, ColorDictionary, COARSE_LEVELS, FINE_LEVELS};
use qnq_core::pipeline::{run_cross_validation, run_pipeline, run_stages, EmitSet, PipelineConfig, Quantizer};
use qnq_core::raster::RasterImage;
use qnq_core::reconstruction::rmse_bands;
use qnq_core::QnqError;

fn scene(w: usize, h: usize, shift: u8) -> RasterImage {
    RasterImage::from_fn(w, h, |x, y| {
        let band = ((x / 9 + y / 7) % 5) as u8;
        [band * 50 + shift, (x * 255 / w) as u8, ((y * 3) % 256) as u8]
    })
    .unwrap()
}

#[test]
fn artifacts_decode_back_to_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("scene.ppm");
    write_image(&input, &scene(61, 43, 0)).unwrap();
    let out = dir.path().join("out");
    let report = run_pipeline(&input, &out, &PipelineConfig::default(), ColorDictionary::builtin()).unwrap();

    assert_eq!(report.pixels, 61 * 43);
    let fine = unpack_colormap(&fs::read(out.join("fine_map.qnq")).unwrap()).unwrap();
    let coarse = unpack_colormap(&fs::read(out.join("coarse_map.qnq")).unwrap()).unwrap();
    assert_eq!(fine.levels(), FINE_LEVELS);
    assert_eq!(coarse.levels(), COARSE_LEVELS);
    assert_eq!(coarsen(&fine, ColorDictionary::builtin()).unwrap(), coarse);

    for level in &report.levels {
        let labels = decode_labels(&fs::read(out.join(format!("{}_segments.seg", level.name))).unwrap()).unwrap();
        assert_eq!(labels.segment_count(), level.segment_count);
        let csv = fs::read_to_string(out.join(format!("{}_sdt.csv", level.name))).unwrap();
        assert_eq!(csv.lines().count(), level.segment_count as usize + 1);
        let recon = read_image(&out.join(format!("{}_reconstruction.png", level.name))).unwrap();
        let constancy = read_image(&out.join("constancy.png")).unwrap();
        let r = rmse_bands(&constancy, &recon).unwrap();
        for b in 0..3 {
            assert!((r[b] - level.rmse[b]).abs() < 1e-5);
        }
    }
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["levels"].as_array().unwrap().len(), 2);
    assert!(out.join("timings.json").exists());
}

#[test]
fn emit_subset_limits_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("scene.png");
    write_image(&input, &scene(20, 20, 3)).unwrap();
    let out = dir.path().join("out");
    let cfg = PipelineConfig { emit: "packed,report".parse::<EmitSet>().unwrap(), ..PipelineConfig::default() };
    run_pipeline(&input, &out, &cfg, ColorDictionary::builtin()).unwrap();
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["coarse_map.qnq", "fine_map.qnq", "report.json", "timings.json"]);
}

#[test]
fn tiling_and_threads_do_not_change_results() {
    let image = scene(97, 131, 10);
    let dict = ColorDictionary::builtin();
    let whole = run_stages(&image, &PipelineConfig::default(), dict).unwrap();
    for th in [1, 5, 64] {
        let cfg = PipelineConfig { tile_height: Some(th), ..PipelineConfig::default() };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let tiled = pool.install(|| run_stages(&image, &cfg, dict)).unwrap();
        assert_eq!(tiled.constancy.image, whole.constancy.image);
        for (a, b) in tiled.levels.iter().zip(&whole.levels) {
            assert_eq!(a.map, b.map);
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.table, b.table);
            assert_eq!(a.reconstruction, b.reconstruction);
        }
        assert_eq!(tiled.texture, whole.texture);
    }
}

#[test]
fn capacity_error_for_tiny_budget() {
    let cfg = PipelineConfig { tile_height: Some(100), ram_budget: 10, ..PipelineConfig::default() };
    let err = run_stages(&scene(50, 200, 0), &cfg, ColorDictionary::builtin()).unwrap_err();
    assert!(matches!(err, QnqError::Capacity(_)), "{err}");
}

#[test]
fn missing_and_corrupt_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();
    let dict = ColorDictionary::builtin();
    let err = run_pipeline(&dir.path().join("nope.png"), dir.path(), &cfg, dict).unwrap_err();
    assert_eq!(err.class(), "io");
    let bad = dir.path().join("bad.png");
    fs::write(&bad, b"not an image at all").unwrap();
    let err = run_pipeline(&bad, dir.path(), &cfg, dict).unwrap_err();
    assert_eq!(err.class(), "format");
}

#[test]
fn cross_validation_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let inputs: Vec<_> = (0..2)
        .map(|i| {
            let p = dir.path().join(format!("img{i}.png"));
            write_image(&p, &scene(48 + i * 8, 40, i as u8 * 20)).unwrap();
            p
        })
        .collect();
    let out = dir.path().join("cv");
    let cfg = PipelineConfig {
        quantizer: Quantizer::Kmeans,
        kmeans: qnq_core::vq::KMeansConfig { k: 8, ..Default::default() },
        ..PipelineConfig::default()
    };
    let report = run_cross_validation(&inputs, &out, &cfg, ColorDictionary::builtin()).unwrap();
    // rgbiam, one k-means column per training image, hybrid.
    assert_eq!(report.zscores.algorithms.len(), 4);
    assert_eq!(report.zscores.totals.len(), 5);
    let header = fs::read_to_string(out.join("indicators.csv")).unwrap();
    assert!(header.starts_with("image,indicator,orientation,rgbiam,"));
    assert!(out.join("zscores.csv").exists() && out.join("cross_validation.json").exists());
}
