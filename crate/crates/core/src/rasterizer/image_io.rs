//! PFM (linear float) and 8-bit PNG image files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};

use super::Image;
use crate::error::{Error, Result};

/// Writes a little-endian color PFM. Rows are stored bottom to top.
pub fn write_pfm(path: &Path, image: &Image) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        write!(w, "PF\n{} {}\n-1.0\n", image.width, image.height)?;
        for y in (0..image.height).rev() {
            let row = &image.rgb[3 * y * image.width..3 * (y + 1) * image.width];
            for &v in row {
                w.write_f32::<LittleEndian>(v as f32)?;
            }
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

fn read_header_line(r: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if line.is_empty() {
        return Err(Error::format(path, "truncated PFM header"));
    }
    Ok(line.trim().to_string())
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    if read_header_line(&mut r, path)? != "PF" {
        return Err(Error::format(path, "not a color PFM"));
    }
    let dims = read_header_line(&mut r, path)?;
    let mut it = dims.split_whitespace().map(str::parse::<usize>);
    let (width, height) = match (it.next(), it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h)), None) if w > 0 && h > 0 => (w, h),
        _ => return Err(Error::format(path, format!("bad PFM dimensions {dims:?}"))),
    };
    let scale: f64 = read_header_line(&mut r, path)?
        .parse()
        .map_err(|_| Error::format(path, "bad PFM scale"))?;
    if scale == 0.0 {
        return Err(Error::format(path, "PFM scale is zero"));
    }
    let mut data = vec![0f32; 3 * width * height];
    let read = if scale < 0.0 {
        r.read_f32_into::<LittleEndian>(&mut data)
    } else {
        r.read_f32_into::<BigEndian>(&mut data)
    };
    read.map_err(|e| Error::io(path, e))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after PFM data"));
    }
    let mut image = Image::new(width, height);
    for y in 0..height {
        let src = &data[3 * (height - 1 - y) * width..3 * (height - y) * width];
        for (dst, &v) in image.rgb[3 * y * width..3 * (y + 1) * width]
            .iter_mut()
            .zip(src)
        {
            *dst = v as f64;
        }
    }
    Ok(image)
}

/// Writes an 8-bit RGB PNG, clamping to `[0, 1]` without gamma.
pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let bytes: Vec<u8> = image
        .rgb
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    image::save_buffer(
        path,
        &bytes,
        image.width as u32,
        image.height as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image() -> Image {
        Image::from_fn(5, 3, |x, y, ch| {
            (x as f64 * 0.2 + y as f64 * 0.1 + ch as f64 * 0.05) as f32 as f64
        })
    }

    #[test]
    fn pfm_round_trip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pfm");
        let image = gradient_image();
        write_pfm(&path, &image).unwrap();
        assert_eq!(read_pfm(&path).unwrap(), image);
    }

    #[test]
    fn pfm_stores_bottom_row_first() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pfm");
        let image = gradient_image();
        write_pfm(&path, &image).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"PF\n5 3\n-1.0\n".len();
        let first = f32::from_le_bytes(bytes[header..header + 4].try_into().unwrap());
        assert_eq!(first as f64, image.get(2 * 5)[0]);
    }

    #[test]
    fn truncated_pfm_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pfm");
        std::fs::write(&path, b"PF\n2 2\n-1.0\n\0\0").unwrap();
        assert!(matches!(read_pfm(&path), Err(Error::Io { .. })));
        std::fs::write(&path, b"P6\n2 2\n-1.0\n").unwrap();
        assert!(matches!(read_pfm(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn png_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        write_png(&path, &gradient_image()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}
