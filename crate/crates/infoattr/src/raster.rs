//! PNG and binary PNM (P5/P6) image files, 8 bits per sample.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use infoattr_core::Image;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

/// Loads an 8-bit grayscale or RGB image; the format is sniffed from the
/// file content.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else {
        Err(Error::format("not a PNG, PGM (P5) or PPM (P6) image"))
    }
}

/// Saves by extension: `.png` (gray or RGB), `.pgm` (gray), `.ppm` (RGB).
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "png" => encode_png(image)?,
        "pgm" | "ppm" => {
            let want = if ext == "pgm" { 1 } else { 3 };
            if image.channels() != want {
                return Err(Error::format(format!(
                    "{} needs {want} channel(s), image has {}",
                    path.display(),
                    image.channels()
                )));
            }
            encode_pnm(image)
        }
        _ => return Err(Error::format(format!("unknown image extension for {}", path.display()))),
    };
    write_atomic(path, &bytes)
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let fmt = |e: png::DecodingError| Error::format(format!("PNG: {e}"));
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(fmt)?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(format!("unsupported PNG bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::format(format!("unsupported PNG color type {other:?}"))),
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("PNG dimensions overflow"))?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(fmt)?;
    buf.truncate(frame.buffer_size());
    Ok(Image::new(frame.height as usize, frame.width as usize, channels, buf)?)
}

fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let fmt = |e: png::EncodingError| Error::format(format!("PNG: {e}"));
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        enc.set_color(if image.channels() == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(fmt)?;
        writer.write_image_data(image.data()).map_err(fmt)?;
        writer.finish().map_err(fmt)?;
    }
    Ok(out)
}

/// Reads the next whitespace-separated header token, skipping `#` comments.
fn pnm_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::format("truncated PNM header")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format("malformed PNM header"))
}

fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = if bytes[1] == b'5' { 1 } else { 3 };
    let mut pos = 2;
    let width = pnm_token(bytes, &mut pos)?;
    let height = pnm_token(bytes, &mut pos)?;
    let maxval = pnm_token(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::format(format!("unsupported PNM maxval {maxval} (only 8-bit 255)")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format("malformed PNM header"));
    }
    pos += 1;
    let len = height * width * channels;
    let data = bytes
        .get(pos..pos + len)
        .ok_or_else(|| Error::format(format!("PNM payload needs {len} bytes, has {}", bytes.len() - pos)))?;
    Ok(Image::new(height, width, channels, data.to_vec())?)
}

fn encode_pnm(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.data());
    out
}

/// Every `.png`, `.ppm` and `.pgm` file in a directory, sorted by name.
pub fn image_files(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm" | "pgm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every image in a directory; an empty directory is an I/O error.
pub fn load_image_dir(dir: impl AsRef<Path>) -> Result<Vec<Image>> {
    let dir = dir.as_ref();
    let files = image_files(dir)?;
    if files.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "found 0 image files (.png/.ppm/.pgm)"),
        ));
    }
    files.iter().map(load_image).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_ppm_bytes() {
        let mut file = b"P6\n# comment\n2 2\n255\n".to_vec();
        let px: Vec<u8> = (0..12).collect();
        file.extend_from_slice(&px);
        let img = decode_image(&file).unwrap();
        assert_eq!(img.shape(), (2, 2, 3));
        assert_eq!(img.data(), &px[..]);
        assert_eq!(img.pixel(1, 0), &[6, 7, 8]);
        assert_eq!(encode_pnm(&img), b"P6\n2 2\n255\n".iter().chain(&px).copied().collect::<Vec<_>>());
    }

    #[test]
    fn pnm_errors() {
        assert!(matches!(decode_image(b"P5\n2 2\n65535\n"), Err(Error::Format(_))));
        assert!(matches!(decode_image(b"P5\n2 2\n255\n\x01"), Err(Error::Format(_))));
        assert!(matches!(decode_image(b"P5\n2"), Err(Error::Format(_))));
        assert!(matches!(decode_image(b"GIF89a"), Err(Error::Format(_))));
    }

    #[test]
    fn png_round_trip_in_memory() {
        for ch in [1, 3] {
            let img = Image::from_fn(5, 7, ch, |r, c, k| (r * 31 + c * 7 + k) as u8).unwrap();
            assert_eq!(decode_png(&encode_png(&img).unwrap()).unwrap(), img);
        }
    }

    #[test]
    fn sixteen_bit_png_rejected() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 2);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0; 8]).unwrap();
        }
        let err = decode_image(&out).unwrap_err();
        assert!(err.to_string().contains("bit depth"), "{err}");
    }

    #[test]
    fn rgba_png_rejected() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[1, 2, 3, 4]).unwrap();
        }
        assert!(decode_image(&out).unwrap_err().to_string().contains("color type"));
    }
}
