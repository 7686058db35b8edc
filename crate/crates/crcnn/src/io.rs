//! 8-bit image files and atomic artifact writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crcnn_core::checkpoint::Checkpoint;
use crcnn_core::data::{to_grayscale, Frame, RgbFrame};
use crcnn_core::model::NetworkName;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, GrayImage, ImageEncoder, ImageFormat};
use serde::Serialize;

use crate::error::{CliError, Result};

/// Extensions recognized as frames, in lookup order.
pub const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "pgm", "ppm", "pnm"];

/// Reads an image as 8-bit grayscale. Color images go through the same
/// luma weights the training pipeline uses.
pub fn read_frame(path: &Path) -> Result<Frame> {
    let img = image::ImageReader::open(path)
        .map_err(|e| CliError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| CliError::io(path, e))?
        .decode()
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let frame = match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            Frame::new(w as usize, h as usize, g.into_raw())
        }
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLumaA16(_) => {
            let g = img.to_luma8();
            let (w, h) = g.dimensions();
            Frame::new(w as usize, h as usize, g.into_raw())
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            RgbFrame::new(w as usize, h as usize, rgb.into_raw()).map(|f| to_grayscale(&f))
        }
    };
    frame.map_err(|e| CliError::from(e).at(path))
}

/// Writes a grayscale frame; the format follows the extension (PNG, or
/// binary PGM for `.pgm`).
pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    let format = ImageFormat::from_path(path)
        .ok()
        .filter(|f| matches!(f, ImageFormat::Png | ImageFormat::Pnm))
        .ok_or_else(|| {
            CliError::usage(format!(
                "{}: images are written as .png or .pgm",
                path.display()
            ))
        })?;
    let img = GrayImage::from_raw(
        frame.width() as u32,
        frame.height() as u32,
        frame.pixels().to_vec(),
    )
    .expect("frame buffer matches its dimensions");
    let mut bytes = Vec::new();
    let written = match format {
        ImageFormat::Pnm => PnmEncoder::new(&mut bytes)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(
                img.as_raw(),
                img.width(),
                img.height(),
                ExtendedColorType::L8,
            ),
        _ => img.write_to(&mut std::io::Cursor::new(&mut bytes), format),
    };
    written.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    write_atomic(path, &bytes)
}

/// Writes through a temporary file in the target directory, then renames,
/// so readers never see a partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_atomic(path, &checkpoint.encode())
}

/// Loads a checkpoint and, when `expected` is given, checks which network
/// it holds.
pub fn load_checkpoint(path: &Path, expected: Option<NetworkName>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let ck = Checkpoint::decode(&bytes).map_err(|e| CliError::from(e).at(path))?;
    if let Some(name) = expected {
        if ck.network.name() != name {
            return Err(CliError::data(format!(
                "{}: holds a {} network, expected {name}",
                path.display(),
                ck.network.name()
            )));
        }
    }
    Ok(ck)
}
