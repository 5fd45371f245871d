//! PNG and binary PPM (P6) input/output.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};

use crate::error::{QnqError, Result};
use crate::raster::RasterImage;

/// On-disk image container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFileFormat {
    Png,
    Ppm,
}

impl ImageFileFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("png") => Ok(Self::Png),
            Some("ppm") | Some("pnm") => Ok(Self::Ppm),
            _ => Err(QnqError::format(format!(
                "unsupported image extension for {} (expected .png or .ppm)",
                path.display()
            ))),
        }
    }
}

/// Reads an 8-bit 3-band PNG or P6 PPM. Anything else is a format error.
pub fn read_image(path: &Path) -> Result<RasterImage> {
    let reader = ImageReader::new(BufReader::new(File::open(path)?)).with_guessed_format()?;
    decode(reader)
}

pub fn decode_image(bytes: &[u8]) -> Result<RasterImage> {
    decode(ImageReader::new(Cursor::new(bytes)).with_guessed_format()?)
}

fn decode<R: std::io::BufRead + std::io::Seek>(reader: ImageReader<R>) -> Result<RasterImage> {
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => {
            return Err(QnqError::format(format!(
                "unsupported image container {other:?}"
            )))
        }
    }
    let decoded = reader.decode()?;
    match decoded {
        image::DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            RasterImage::new(w as usize, h as usize, buf.into_raw())
        }
        other => Err(QnqError::format(format!(
            "expected an 8-bit 3-band image, got {:?}",
            other.color()
        ))),
    }
}

pub fn encode_image(image: &RasterImage, format: ImageFileFormat) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let (w, h) = dims_u32(image.width(), image.height())?;
    match format {
        ImageFileFormat::Png => {
            PngEncoder::new(&mut out).write_image(image.samples(), w, h, ExtendedColorType::Rgb8)?
        }
        ImageFileFormat::Ppm => PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(image.samples(), w, h, ExtendedColorType::Rgb8)?,
    }
    Ok(out)
}

/// Writes the image in the format named by the path's extension.
pub fn write_image(path: &Path, image: &RasterImage) -> Result<()> {
    let bytes = encode_image(image, ImageFileFormat::from_path(path)?)?;
    write_bytes(path, &bytes)
}

/// Single-band 8-bit PNG.
pub fn write_gray_png(path: &Path, width: usize, height: usize, values: &[u8]) -> Result<()> {
    if values.len() != width * height {
        return Err(QnqError::integrity("gray raster length does not match its dimensions"));
    }
    let (w, h) = dims_u32(width, height)?;
    let mut out = Vec::new();
    PngEncoder::new(&mut out).write_image(values, w, h, ExtendedColorType::L8)?;
    write_bytes(path, &out)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(bytes)?;
    file.flush()?;
    Ok(())
}

fn dims_u32(width: usize, height: usize) -> Result<(u32, u32)> {
    match (u32::try_from(width), u32::try_from(height)) {
        (Ok(w), Ok(h)) => Ok((w, h)),
        _ => Err(QnqError::capacity("image dimensions exceed u32")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_image() -> RasterImage {
        RasterImage::from_fn(7, 5, |x, y| [(x * 31) as u8, (y * 47) as u8, ((x ^ y) * 13) as u8])
            .unwrap()
    }

    #[test]
    fn png_and_ppm_round_trip() {
        let img = sample_image();
        for format in [ImageFileFormat::Png, ImageFileFormat::Ppm] {
            let bytes = encode_image(&img, format).unwrap();
            assert_eq!(decode_image(&bytes).unwrap(), img);
        }
    }

    #[test]
    fn ppm_is_binary_p6() {
        let bytes = encode_image(&sample_image(), ImageFileFormat::Ppm).unwrap();
        assert_eq!(&bytes[..2], b"P6");
    }

    #[test]
    fn rejects_gray_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        write_gray_png(&path, 2, 2, &[0, 1, 2, 3]).unwrap();
        assert!(matches!(read_image(&path), Err(QnqError::Format(_))));
    }

    #[test]
    fn unknown_extension_is_format_error() {
        assert!(ImageFileFormat::from_path(Path::new("a.jpg")).is_err());
        assert_eq!(
            ImageFileFormat::from_path(Path::new("a.PNG")).unwrap(),
            ImageFileFormat::Png
        );
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            read_image(Path::new("/nonexistent/x.png")),
            Err(QnqError::Io(_))
        ));
    }
}
