//! Loading and saving 128x128 8-bit grayscale images and masks, and corpus
//! directories.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use bhgan_core::dataset::{Corpus, CorpusItem, MaskConfig, IMAGE_SIZE};
use bhgan_core::{ImageGray, Mask};
use log::warn;

use crate::error::{Error, Result};
use crate::pgm::{self, Gray8};

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";
const MASK_SUFFIX: &str = ".mask.pgm";

fn is_png_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Read any 8-bit grayscale PGM or PNG file.
pub fn read_gray(path: &Path) -> Result<Gray8> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(&bytes).map_err(|msg| Error::format(path, msg))
    } else {
        pgm::decode(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Gray8, String> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale {
        return Err(format!("expected a grayscale PNG, found color type {color:?}"));
    }
    if depth != png::BitDepth::Eight {
        return Err(format!("expected 8-bit samples, found {depth:?}"));
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    // rows may be padded to the line size
    let data = buf.chunks(frame.line_size).take(height).flat_map(|row| &row[..width]).copied().collect();
    Ok(Gray8 { width, height, data })
}

/// Write a grayscale raster, as PNG when the extension says so and PGM
/// otherwise.
pub fn write_gray(img: &Gray8, path: &Path) -> Result<()> {
    let bytes = if is_png_path(path) {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header()
            .and_then(|mut w| w.write_image_data(&img.data))
            .map_err(|e| Error::format(path, e.to_string()))?;
        out
    } else {
        pgm::encode(img)
    };
    write_atomic(path, &bytes)
}

/// Write to a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let name = path.file_name().ok_or_else(|| Error::format(path, "not a file path"))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let file = fs::File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        w.write_all(bytes)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::io(path, e))
}

fn check_size(img: &Gray8, path: &Path) -> Result<()> {
    if (img.width, img.height) != (IMAGE_SIZE, IMAGE_SIZE) {
        return Err(Error::format(
            path,
            format!("expected a {IMAGE_SIZE}x{IMAGE_SIZE} image, found {}x{}", img.width, img.height),
        ));
    }
    Ok(())
}

pub fn load_image(path: &Path) -> Result<ImageGray> {
    let raw = read_gray(path)?;
    check_size(&raw, path)?;
    Ok(ImageGray::from_bytes(&raw.data)?)
}

pub fn save_image(img: &ImageGray, path: &Path) -> Result<()> {
    write_gray(&Gray8 { width: IMAGE_SIZE, height: IMAGE_SIZE, data: img.to_bytes() }, path)
}

/// Save raw normalized values, clamping anything outside `[-1, 1]`.
pub fn save_values(values: &[f32], path: &Path) -> Result<()> {
    let (img, clamped) = ImageGray::clamped(values.to_vec())?;
    if clamped > 0 {
        warn!("{}: clamped {clamped} out-of-range values", path.display());
    }
    save_image(&img, path)
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    let raw = read_gray(path)?;
    check_size(&raw, path)?;
    Ok(Mask::from_bytes(&raw.data)?)
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    write_gray(&Gray8 { width: IMAGE_SIZE, height: IMAGE_SIZE, data: mask.to_bytes() }, path)
}

/// `<stem>.mask.pgm` next to `image` (or inside `dir` when given).
pub fn mask_path_for(image: &Path, dir: Option<&Path>) -> PathBuf {
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| image.parent().map(Path::to_path_buf).unwrap_or_default());
    dir.join(format!("{stem}{MASK_SUFFIX}"))
}

/// Image files in `dir` (PGM or PNG, mask files excluded), sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let ext_ok = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("png"));
        if path.is_file() && ext_ok && !name.ends_with(MASK_SUFFIX) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Load every valid image in `dir` with its sibling mask when present.
/// Unreadable images are skipped with a warning; no valid image is an error.
pub fn load_corpus(dir: &Path, mask_cfg: MaskConfig) -> Result<Corpus> {
    let mut items = Vec::new();
    for path in list_images(dir)? {
        let image = match load_image(&path) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {e}");
                continue;
            }
        };
        let mask_path = mask_path_for(&path, None);
        let mask = if mask_path.exists() { Some(load_mask(&mask_path)?) } else { None };
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        items.push(CorpusItem { name, image, mask });
    }
    if items.is_empty() {
        return Err(Error::format(dir, "no valid 128x128 grayscale images found"));
    }
    Ok(Corpus::new(items, mask_cfg))
}
