//! Grayscale images as PFM (32-bit float) or PNG (8/16-bit).

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use image::{ImageBuffer, ImageReader, Luma};

use crate::error::{Error, Result};
use crate::Image;

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Corrupt { path: path.to_path_buf(), reason: reason.into() }
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Reads `.pfm` exactly or `.png` mapped to `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image> {
    match extension(path).as_str() {
        "pfm" => read_pfm(path),
        "png" => read_png(path),
        other => Err(Error::UnsupportedFormat(format!("{} (extension {other:?})", path.display()))),
    }
}

/// Writes `.pfm` or 8-bit `.png` depending on the extension.
pub fn write_image(image: &Image, path: &Path) -> Result<()> {
    match extension(path).as_str() {
        "pfm" => write_pfm(image, path),
        "png" => write_png(image, path, 8),
        other => Err(Error::UnsupportedFormat(format!("{} (extension {other:?})", path.display()))),
    }
}

/// Grayscale PFM: little-endian f32 rows, bottom row first.
pub fn write_pfm(image: &Image, path: &Path) -> Result<()> {
    let (h, w) = image.dim();
    let mut buf = Vec::with_capacity(32 + 4 * h * w);
    write!(buf, "Pf\n{w} {h}\n-1.0\n")?;
    for i in (0..h).rev() {
        for j in 0..w {
            buf.extend_from_slice(&(image[[i, j]] as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

fn header_token(reader: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if reader.read(&mut byte)? == 0 {
            return Err(corrupt(path, "header ends early"));
        }
        if byte[0].is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(byte[0]);
        if token.len() > 32 {
            return Err(corrupt(path, "header token too long"));
        }
    }
    String::from_utf8(token).map_err(|_| corrupt(path, "header is not text"))
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    match header_token(&mut reader, path)?.as_str() {
        "Pf" => {}
        "PF" => return Err(Error::UnsupportedFormat(format!("{}: color PFM", path.display()))),
        other => return Err(corrupt(path, format!("unknown PFM signature {other:?}"))),
    }
    let w: usize = header_token(&mut reader, path)?.parse().map_err(|_| corrupt(path, "bad width"))?;
    let h: usize = header_token(&mut reader, path)?.parse().map_err(|_| corrupt(path, "bad height"))?;
    let scale: f64 = header_token(&mut reader, path)?.parse().map_err(|_| corrupt(path, "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(corrupt(path, "zero scale"));
    }
    let little = scale < 0.0;
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw)?;
    let need = w.checked_mul(h).and_then(|n| n.checked_mul(4)).ok_or_else(|| corrupt(path, "extents overflow"))?;
    if raw.len() != need {
        return Err(corrupt(path, format!("expected {need} data bytes, found {}", raw.len())));
    }
    let mut image = Image::zeros((h, w));
    for (k, chunk) in raw.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("4 bytes");
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        image[[h - 1 - k / w, k % w]] = v as f64;
    }
    Ok(image)
}

/// Grayscale PNG with `bits` of 8 or 16; values are clamped to `[0, 1]`.
pub fn write_png(image: &Image, path: &Path, bits: u8) -> Result<()> {
    let (h, w) = image.dim();
    let err = |e: image::ImageError| Error::UnsupportedFormat(format!("{}: {e}", path.display()));
    match bits {
        8 => {
            let buf = ImageBuffer::<Luma<u8>, _>::from_fn(w as u32, h as u32, |x, y| {
                Luma([(image[[y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8])
            });
            buf.save(path).map_err(err)
        }
        16 => {
            let buf = ImageBuffer::<Luma<u16>, _>::from_fn(w as u32, h as u32, |x, y| {
                Luma([(image[[y as usize, x as usize]].clamp(0.0, 1.0) * 65535.0).round() as u16])
            });
            buf.save(path).map_err(err)
        }
        other => Err(Error::InvalidArgument(format!("PNG depth {other} (use 8 or 16)"))),
    }
}

/// Reads any PNG as luminance in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Image> {
    let decoded = ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| corrupt(path, e.to_string()))?;
    let eight_bit = matches!(decoded.color(), image::ColorType::L8 | image::ColorType::La8 | image::ColorType::Rgb8 | image::ColorType::Rgba8);
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if eight_bit {
        let g = decoded.to_luma8();
        Ok(Image::from_shape_fn((h, w), |(i, j)| g.get_pixel(j as u32, i as u32)[0] as f64 / 255.0))
    } else {
        let g = decoded.to_luma16();
        Ok(Image::from_shape_fn((h, w), |(i, j)| g.get_pixel(j as u32, i as u32)[0] as f64 / 65535.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Image::from_shape_fn((h, w), |_| rng.random::<f32>() as f64)
    }

    #[test]
    fn pfm_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfm");
        let x = random(7, 11);
        write_image(&x, &path).unwrap();
        assert_eq!(read_image(&path).unwrap(), x);
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"Pf\n11 7\n-1.0\n"));
    }

    #[test]
    fn big_endian_pfm_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("be.pfm");
        let mut buf = b"Pf\n2 1\n1.0\n".to_vec();
        buf.extend_from_slice(&0.25f32.to_be_bytes());
        buf.extend_from_slice(&0.5f32.to_be_bytes());
        std::fs::write(&path, buf).unwrap();
        let x = read_pfm(&path).unwrap();
        assert_eq!(x.as_slice().unwrap(), &[0.25, 0.5]);
    }

    #[test]
    fn png_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let x = random(9, 5);
        let p8 = dir.path().join("x.png");
        write_image(&x, &p8).unwrap();
        let back = read_image(&p8).unwrap();
        assert!((&back - &x).iter().all(|d| d.abs() <= 1.0 / 510.0 + 1e-12));
        let p16 = dir.path().join("x16.png");
        write_png(&x, &p16, 16).unwrap();
        let back = read_png(&p16).unwrap();
        assert!((&back - &x).iter().all(|d| d.abs() <= 1.0 / 131070.0 + 1e-12));
    }

    #[test]
    fn errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_image(&dir.path().join("nope.pfm")), Err(Error::Io(_))));
        assert!(matches!(read_image(&dir.path().join("x.bmp")), Err(Error::UnsupportedFormat(_))));
        let bad = dir.path().join("bad.pfm");
        std::fs::write(&bad, b"Pf\n4 4\n-1.0\n\x00\x00").unwrap();
        assert!(matches!(read_pfm(&bad), Err(Error::Corrupt { .. })));
        std::fs::write(&bad, b"P5\n4 4\n255\n").unwrap();
        assert!(matches!(read_pfm(&bad), Err(Error::Corrupt { .. })));
        std::fs::write(&bad, b"PF\n1 1\n-1.0\n").unwrap();
        assert!(matches!(read_pfm(&bad), Err(Error::UnsupportedFormat(_))));
    }
}
