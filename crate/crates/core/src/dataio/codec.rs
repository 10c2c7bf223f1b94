use std::io::Cursor;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageReader};

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::imageops::Image;

/// Decodes a PNG or JPEG file into an RGB raster. The format is sniffed from
/// the file contents, not the extension.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let codec = |source| Error::Codec {
        path: path.to_path_buf(),
        source,
    };
    let decoded = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(codec)?
        .into_rgb8();
    let (w, h) = decoded.dimensions();
    let pixels = decoded
        .into_raw()
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Image::new(w, h, pixels)
}

pub(crate) fn encode_png(img: &Image) -> std::result::Result<Vec<u8>, image::ImageError> {
    let raw: Vec<u8> = img.pixels().iter().flatten().copied().collect();
    let mut out = Vec::new();
    PngEncoder::new(&mut out).write_image(
        &raw,
        img.width(),
        img.height(),
        ExtendedColorType::Rgb8,
    )?;
    Ok(out)
}

pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img).map_err(|source| Error::Codec {
        path: path.to_path_buf(),
        source,
    })?;
    write_file(path, &bytes)
}
