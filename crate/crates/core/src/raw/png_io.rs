use std::fs;
use std::io::Cursor;
use std::path::Path;

use super::{Planes, RgbImage};
use crate::error::{bail, Error, Result};

/// Largest accepted side length; guards allocation on hostile headers.
pub const MAX_SIDE: u32 = 1 << 14;

/// Decodes an 8- or 16-bit gray/RGB/RGBA PNG into `[0, 1]` planes
/// (16-bit input is reduced to 8 bits, alpha is dropped).
pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Data(format!("png: {e}")))?;
    let (w, h) = {
        let info = reader.info();
        (info.width, info.height)
    };
    if w == 0 || h == 0 || w > MAX_SIDE || h > MAX_SIDE {
        bail!(Data, "png dimensions {w}x{h} out of range");
    }
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::Data(format!("png: {e}")))?;
    let channels = match frame.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => bail!(Data, "indexed png was not expanded"),
    };
    if frame.bit_depth != png::BitDepth::Eight {
        bail!(Data, "unsupported png bit depth {:?}", frame.bit_depth);
    }
    let (h, w) = (h as usize, w as usize);
    let mut planes = Planes::zeros(3, h, w);
    for y in 0..h {
        let row = &buf[y * frame.line_size..y * frame.line_size + w * channels];
        for x in 0..w {
            let px = &row[x * channels..(x + 1) * channels];
            for c in 0..3 {
                let v = if channels < 3 { px[0] } else { px[c] };
                planes.set(c, y, x, v as f64 / 255.0);
            }
        }
    }
    RgbImage::new(planes)
}

/// Encodes an RGB image as an 8-bit PNG (values rounded to the nearest level).
pub fn encode_png(rgb: &RgbImage) -> Result<Vec<u8>> {
    let (h, w) = (rgb.height(), rgb.width());
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data.push((rgb.planes.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Data(format!("png: {e}")))?;
        writer
            .write_image_data(&data)
            .map_err(|e| Error::Data(format!("png: {e}")))?;
    }
    Ok(out)
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_png(path: &Path, rgb: &RgbImage) -> Result<()> {
    fs::write(path, encode_png(rgb)?).map_err(|e| Error::io(path, e))
}
